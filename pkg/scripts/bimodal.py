"""Bimodal toy problem: acceptance per scheme, k-means split of the mixture chain,
and single-basin fractions on the far-mode variant."""

import numpy as np

from _common import dump, parser, run_one, setup
from gmis.adaptation import kmeans
from gmis.diagnostics import burn_in


def basin_fraction(res):
    b = res.problem.basis
    proj = b.synthesize(res.trace.U) @ (np.sin(2 * np.pi * b.grid.points) * b.grid.weights)
    return float(max(np.mean(proj > 0), np.mean(proj < 0)))


def main():
    args = parser(__doc__).parse_args()
    root = setup(args) / "bimodal"
    summary = {"acceptance": {}, "far_basin_fraction": {}}
    for s in ("prior-is", "adaptive-is-gaussian", "adaptive-is-mixture"):
        out = run_one("bimodal", s, root / s, args)
        summary["acceptance"][s] = out["report"]["acceptance_rate"]
    res = out["result"]
    b = res.problem.basis
    U = res.trace.U[burn_in(len(res.trace)) :]
    labels = kmeans(U, 2, np.random.default_rng(args.seed))
    s = np.sin(2 * np.pi * b.grid.points)
    w = b.grid.weights
    clusters = []
    for j in range(2):
        m = b.synthesize(U[labels == j].mean(axis=0))
        sign = 1.0 if m @ (s * w) > 0 else -1.0
        clusters.append({"weight": float(np.mean(labels == j)), "sign": sign,
                         "rel_l2": float(np.sqrt(np.sum(w * (m - sign * s) ** 2) / np.sum(w * s**2)))})
    summary["clusters"] = clusters
    for sch in ("adaptive-is-mixture", "pcn"):
        far = run_one("bimodal-far", sch, root / f"far-{sch}", args)["result"]
        summary["far_basin_fraction"][sch] = basin_fraction(far)
    dump(root / "summary.json", summary)


if __name__ == "__main__":
    main()
