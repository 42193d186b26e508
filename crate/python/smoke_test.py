"""Smoke test for the ridechain Python bindings.

Build and install first:  pip install --no-build-isolation ./crates/py
"""

import math

import ridechain as rc


def main():
    grid = rc.Grid(2, 2)
    assert grid.n == 4 and sorted(grid.neighbors(0)) == [1, 2]

    space = rc.StateSpace(grid, 2, 2)
    assert len(space) == 10
    for i, counts in enumerate(space.states()):
        assert space.rank(rc.DriverState(counts, 2)) == i

    model = rc.RequestModel.uniform(grid, 1 / 16)
    policy = rc.Policy("nadap:0.8:origin")
    p = rc.transition_matrix(space, model, policy)
    assert p.max_row_sum_error() < 1e-12 and p.is_irreducible()

    st = rc.stationary(p)
    assert max(abs(x - 0.1) for x in st["pi"]) < 1e-10
    obj = rc.limiting_objective(space, model, policy)
    assert abs(obj - 0.4) < 1e-10, obj
    drop = rc.limiting_objective(space, model, rc.Policy("nadap:0.8"))
    assert abs(drop - 0.36) < 1e-10, drop

    mix = rc.mixing(p, st["pi"], [0.25, 0.01], t_max=500)
    tau = dict(mix["tau"])
    assert tau[0.01] <= 16 * math.log(4 / 0.01)

    cpl = rc.verify_contraction(grid, 2, 2)
    assert cpl["holds"] and cpl["worst_beta"] <= 1 - 1 / 16

    sim = rc.simulate(model, policy, 2, 2, rounds=200, runs=64, seed=7, target=obj)
    assert abs(sim["objective"] - 0.4) < 0.05
    again = rc.simulate(model, policy, 2, 2, rounds=200, runs=64, seed=7, target=obj)
    assert sim["mean"] == again["mean"]

    vi = rc.value_iteration(
        model, 2, 2, episodes=50, horizon=100, seed=3,
        baselines=[rc.Policy("nadap:0.8"), rc.Policy("greedy")],
    )
    returns = dict(vi["returns"])
    assert returns["optimal"] >= returns["nadap:0.8"]

    a, b, r2 = rc.fit_exponential([0, 1, 2, 3], [math.exp(-0.5 * t) for t in range(4)])
    assert abs(a - 1) < 1e-12 and abs(b - 0.5) < 1e-12 and r2 > 0.999999

    gap = rc.lower_bound_gap(50, 5, 100)
    assert len(gap) == 101 and gap[0] >= 0

    try:
        rc.Grid(0, 3)
    except ValueError:
        pass
    else:
        raise AssertionError("empty grid accepted")

    print(f"ok: objective {obj:.12f}, simulated {sim['objective']:.4f}, tau(0.01) {tau[0.01]}")


if __name__ == "__main__":
    main()
