"""Adaptive mixture sampler on the ODE problem at several grid resolutions."""

from _common import dump, parser, run_one, setup


def main():
    p = parser(__doc__)
    p.add_argument("--grids", type=int, nargs="+", default=[50, 100, 200])
    args = p.parse_args()
    root = setup(args) / "dimension"
    rows = {}
    for n in args.grids:
        rep = run_one("ode", "adaptive-is-mixture", root / f"n{n}", args, n_grid=n)["report"]
        rows[n] = {"acceptance_rate": rep["acceptance_rate"], "K": rep["K"], "omf_ess": rep.get("omf_ess")}
    dump(root / "summary.json", rows)


if __name__ == "__main__":
    main()
