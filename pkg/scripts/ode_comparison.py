"""Four samplers on the ODE coefficient problem: acceptance, OMF autocorrelation and ESS."""

from _common import dump, parser, run_one, setup

SCHEMES = ("prior-is", "adaptive-is-gaussian", "adaptive-is-mixture", "pcn")


def main():
    args = parser(__doc__).parse_args()
    root = setup(args) / "ode"
    table = {}
    for s in SCHEMES:
        rep = run_one("ode", s, root / s, args)["report"]
        table[s] = {k: rep.get(k) for k in ("acceptance_rate", "omf_lag1_acf", "omf_ess", "mode_ess_median",
                                            "point_ess_median")}
    dump(root / "summary.json", table)


if __name__ == "__main__":
    main()
