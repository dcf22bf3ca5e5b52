"""Smoke test for the vaml extension module."""

import math

import vaml


def close(a, b, tol=1e-10):
    return abs(a - b) <= tol * (1.0 + abs(b))


def main():
    mdp = vaml.generate_garnet(n_states=12, n_successors=4, temperature=0.5, seed=3)
    assert mdp.n_states == 12
    assert all(close(sum(row), 1.0) for row in mdp.transition)

    v = vaml.exact_value(mdp)
    backed_up = vaml.bellman_operator(mdp, v, 3)
    assert all(close(a, b, 1e-9) for a, b in zip(backed_up, v))

    model = vaml.LowRankModel(12, 12, 4, init_scale=0.5, seed=1)
    row = model.predict_row(0)
    assert close(sum(row), 1.0)
    paths = model.sample(0, 2, 5, seed=2)
    assert len(paths) == 5 and all(len(p) == 2 for p in paths)
    assert vaml.itervaml_expectation(model, mdp, v, 0) >= 0.0

    samples = [1.0, 2.0, 4.0]
    assert close(vaml.variance_estimate(samples), 14.0 / 9.0)
    assert close(vaml.itervaml_sampled(samples, 2.0), 1.0 / 9.0)
    assert close(vaml.cvaml_sampled(samples, 2.0), 1.0 / 9.0 - 7.0 / 9.0)

    # with q equal to p only the two variance terms remain
    p = [0.25, 0.75]
    f = [0.0, 1.0]
    assert close(vaml.g_objective(f, p, 2, p), 0.1875 + 0.1875 / 2)

    small = vaml.FiniteMdp([[0.5, 0.5], [0.2, 0.8]], [1.0, -1.0], 0.9)
    brm, surrogate, bias = vaml.prop23_value_bias(small, [1.0, 2.0])
    assert len(brm) == len(surrogate) == 2 and bias >= 0.0

    mean, lower, upper = vaml.bootstrap_ci([1.0, 2.0, 3.0, 4.0], n_resamples=500, seed=4)
    assert close(mean, 2.5) and lower <= mean <= upper

    rows = vaml.run_garnet_sweep(
        "master_seed = 1\nn_problems = 2\ntemperature_grid = [1.0]\nrank_grid = [3]\n"
        "[garnet]\nn_states = 6\nn_successors = 3\n"
        "[training]\nsteps = 100\ntarget_period = 10\n"
    )
    assert len(rows) == 2 * 5
    assert all(math.isfinite(r[5]) for r in rows)

    try:
        vaml.run_garnet_sweep("bogus_key = 1\n")
    except ValueError:
        pass
    else:
        raise AssertionError("unknown config key was accepted")

    print("smoke test passed")


if __name__ == "__main__":
    main()
