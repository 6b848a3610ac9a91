"""Inverse heat conduction with tempering: cluster the chain and compare the
per-boundary-condition misfits at each cluster mean."""

import numpy as np

from _common import dump, parser, run_one, setup
from gmis.adaptation import kmeans
from gmis.diagnostics import burn_in


def main():
    p = parser(__doc__)
    p.add_argument("--truth-seed", type=int, default=None)
    args = p.parse_args()
    root = setup(args) / "heat"
    extra = {} if args.truth_seed is None else {"truth_seed": args.truth_seed}
    out = run_one("heat", "adaptive-is-mixture", root / "adaptive-is-mixture", args, **extra)
    res = out["result"]
    b, pot = res.problem.basis, res.problem.potential
    U = res.trace.U[burn_in(len(res.trace)) :]
    labels = kmeans(U, 2, np.random.default_rng(args.seed))
    clusters = []
    for j in range(2):
        phi = pot.misfits(b.synthesize(U[labels == j].mean(axis=0)))[0]
        clusters.append({"weight": float(np.mean(labels == j)), "phi_insulated": float(phi[0]),
                         "phi_robin": float(phi[1])})
    dump(root / "summary.json", {"acceptance": out["report"]["acceptance_rate"], "J_final": res.proposal.J,
                                 "tempering": res.adapt.tempering, "clusters": clusters})


if __name__ == "__main__":
    main()
