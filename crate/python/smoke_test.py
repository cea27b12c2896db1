"""Smoke test for the boirl_py extension.

Build and install first:

    pip install --no-build-isolation ./crates/python
"""

import json
import math
import os
import sys
import tempfile

import boirl_py as b


def main():
    env = b.Environment.gridworld()
    print(env)
    gt = env.ground_truth
    assert len(gt) == env.param_dim == 3
    lo, hi = env.bounds
    assert all(l <= t <= h for l, t, h in zip(lo, gt, hi))

    probs, q = env.soft_policy(gt)
    assert len(probs) == env.n_states and len(probs[0]) == env.n_actions
    assert all(abs(sum(row) - 1.0) < 1e-9 for row in probs)

    demos = b.generate_demos(env, gt, n=10, length=6, seed=1)
    assert len(demos) == 10 and all(len(d) == 6 for d in demos)
    t = b.Trajectory(demos[0].steps, demos[0].terminal)
    assert t.steps == demos[0].steps

    # The translation coordinate does not change the policy.
    nll_gt = b.nll(env, demos, gt)
    shifted = [gt[0], gt[1], 2.5]
    assert abs(b.nll(env, demos, shifted) - nll_gt) < 1e-10
    far = [-1.5, -8.0, 0.0]
    assert b.nll(env, demos, far) > nll_gt
    print(f"NLL at ground truth {nll_gt:.4f}, far {b.nll(env, demos, far):.4f}")

    basis = b.generate_basis(env, demos, k=5, m=4, seed=0)
    rho = basis.rho(gt)
    assert len(rho) == basis.k == 5 and all(0.0 < r <= 1.0 for r in rho)
    assert max(abs(x - y) for x, y in zip(rho, basis.rho(shifted))) < 1e-12

    gp = b.GaussianProcess([[0.0], [1.0], [2.0]], [1.0, 0.0, 1.0], kernel="matern", lengthscale=0.7)
    mu, var = gp.posterior([1.0])
    assert abs(mu) < 1e-2 and var >= 0.0
    assert gp.expected_improvement([1.5], 0.0) >= 0.0
    assert math.isfinite(gp.log_marginal_likelihood())

    result = b.run_boirl(env, demos, budget=12, kernel="rho-rbf", seed=3)
    # The budget counts BO iterations after the 5 initial points.
    assert len(result) == 17 and len(result.nlls) == 17
    assert result.best_nll == min(result.nlls)
    mean, _ = result.posterior(result.best_theta)
    print(f"BO-IRL best NLL {result.best_nll:.4f} at {[round(x, 3) for x in result.best_theta]}, GP mean {mean:.4f}")

    expert = b.esor(env, gt, n_rollouts=200, horizon=6)
    learned = b.esor(env, result.best_theta, n_rollouts=200, horizon=6)
    print(f"ESOR expert {expert:.3f}, learned {learned:.3f}")

    with tempfile.TemporaryDirectory() as tmp:
        cfg = os.path.join(tmp, "exp.toml")
        with open(cfg, "w") as f:
            f.write(
                'algorithm = "boirl-rbf"\nseeds = [0, 1]\n'
                "[bo]\nbudget = 8\n"
                "[metrics]\nrollouts = 100\nwrite_gp = false\nwrite_basis = false\n"
            )
        report = json.loads(b.run_experiment(cfg, os.path.join(tmp, "out")))
        assert len(report["seeds"]) == 2
        print(f"experiment: {report['completed']} seeds completed, success rate {report['success_rate']:.2f}")

    try:
        b.nll(env, demos, [0.0, 0.0])
    except ValueError as e:
        print(f"dimension mismatch rejected: {e}")
    else:
        sys.exit("expected a ValueError")

    print("smoke test passed")


if __name__ == "__main__":
    main()
