"""Fixed number of mixture components versus BIC selection on the bimodal problem."""

from _common import dump, parser, run_one, setup


def main():
    p = parser(__doc__)
    p.add_argument("--preset", default="bimodal")
    args = p.parse_args()
    root = setup(args) / f"jsweep-{args.preset}"
    rows = {}
    for J in (1, 2, 3, 4, "auto"):
        rep = run_one(args.preset, "adaptive-is-mixture", root / f"J{J}", args, J=J)["report"]
        rows[str(J)] = {"acceptance_rate": rep["acceptance_rate"], "J_final": rep["J_final"],
                        "omf_lag1_acf": rep.get("omf_lag1_acf")}
    dump(root / "summary.json", rows)


if __name__ == "__main__":
    main()
