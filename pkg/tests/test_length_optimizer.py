import itertools

import numpy as np
import pytest
from hypothesis import given, strategies as st

from ura_sim.errors import ConfigError, InfeasibleError, SizeError
from ura_sim.length_optimizer import (_batch_metrics, _xi_terms, _lse_and_grad, compositions,
                                      evaluate_allocation, exhaustive_oracle, optimize_lengths,
                                      project_box_sum, solve_relaxed)
from ura_sim.outer_code import decoding_complexity, expected_survivors


def test_two_slots_are_pinned():
    # [TRIVIAL] L = 2 leaves a single forced allocation
    opt = optimize_lengths(4, 2, 6, 8, p_th=10.0)
    ora = exhaustive_oracle(4, 2, 6, 8, p_th=10.0)
    assert opt.a.tolist() == ora.a.tolist() == [4]


def test_small_instance_threshold_one_is_unreachable():
    # [DERIVED] the best case packs parity late, a = (0, 3, 4):
    # 25*4/2^7/2^4... = 100/128/16 + 20/128 + 4/16 = 1.1875 > 1
    with pytest.raises(InfeasibleError) as exc:
        exhaustive_oracle(5, 4, 4, 9, 1.0)
    assert exc.value.min_survivors == pytest.approx(1.1875)
    assert exc.value.allocation.tolist() == [0, 3, 4]
    with pytest.raises(InfeasibleError) as exc:
        optimize_lengths(5, 4, 4, 9, 1.0)
    assert exc.value.min_survivors == pytest.approx(1.1875)


@pytest.mark.parametrize("p_th", [1.2, 2.0, 10.0])
def test_small_instance_matches_oracle(p_th):
    # [DERIVED] K=5, L=4, J=4, b=9 against full enumeration
    opt = optimize_lengths(5, 4, 4, 9, p_th)
    ora = exhaustive_oracle(5, 4, 4, 9, p_th)
    assert opt.xi <= ora.xi * (1 + 1e-9)
    assert opt.xi == pytest.approx(ora.xi, rel=1e-12)
    assert sum(opt.a) == 7 and opt.survivors_bound <= p_th
    assert opt.relaxed_xi <= ora.xi * (1 + 1e-9)


def test_oracle_brute_force_is_exhaustive():
    # the oracle agrees with a plain loop over itertools.product
    K, L, J, b, p = 3, 4, 3, 6, 1.0
    best = None
    for a in itertools.product(range(J + 1), repeat=L - 1):
        if sum(a) != L * J - b:
            continue
        xi, chi = evaluate_allocation(a, K, L)
        if chi <= p and (best is None or xi < best[0] - 1e-12):
            best = (xi, a)
    assert exhaustive_oracle(K, L, J, b, p).a.tolist() == list(best[1])


def test_fixed_allocation_beaten_on_large_setup():
    # [PAPER] J=15, L=20 against a = [7,...,7,11,11,11]
    fixed = np.array([7] * 16 + [11] * 3)
    b = 20 * 15 - fixed.sum()
    for K in (50, 100):
        xi_fixed, chi_fixed = evaluate_allocation(fixed, K, 20)
        opt = optimize_lengths(K, 20, 15, b, max(chi_fixed, 0.05))
        assert opt.feasible and opt.xi < xi_fixed


def test_evaluate_examples():
    # [TRIVIAL] K = 1; [DERIVED] hand evaluation at L = 3
    assert evaluate_allocation([2, 3, 1], 1, 4) == (3.0, 0.0)
    xi, chi = evaluate_allocation([2, 2], 3, 3)
    assert xi == pytest.approx(3 * 2 + 3 * (1 * 2 * 0.25)) and chi == pytest.approx(3 * 2 * 1 / 16 + 2 * 0.25)
    a = np.full(4, 5)
    xi, chi = evaluate_allocation(a, 4, 5)
    assert chi == pytest.approx(expected_survivors(4, 5, 2.0 ** -a), rel=1e-12)
    assert xi == pytest.approx(decoding_complexity(4, 5, a), rel=1e-12)


def test_infeasible_reports():
    # [TRIVIAL] p_th = 0 with K >= 2 is never attainable
    with pytest.raises(InfeasibleError) as exc:
        exhaustive_oracle(3, 4, 4, 9, 0.0)
    assert exc.value.min_survivors > 0
    with pytest.raises(InfeasibleError):
        optimize_lengths(3, 4, 4, 9, 0.0)
    relaxed = optimize_lengths(3, 4, 4, 9, 0.0, relax=True)
    assert not relaxed.feasible and sum(relaxed.a) == 7


def test_bad_budgets():
    with pytest.raises(ConfigError):
        optimize_lengths(3, 4, 4, 17, 1.0)
    with pytest.raises(ConfigError):
        optimize_lengths(3, 4, 4, 2, 1.0)
    with pytest.raises(SizeError):
        exhaustive_oracle(3, 12, 15, 100, 1.0)


def test_compositions():
    rows = compositions(3, 4, 2)
    assert rows.shape == (6, 3)
    assert all(r.sum() == 4 and r.max() <= 2 for r in rows)
    assert [tuple(r) for r in rows] == sorted(tuple(r) for r in rows)


@given(st.integers(2, 8), st.data())
def test_projection_is_feasible_and_optimal(n, data):
    lo, hi = 0.0, 5.0
    total = data.draw(st.floats(0, n * hi))
    v = np.array(data.draw(st.lists(st.floats(-20, 20), min_size=n, max_size=n)))
    x = project_box_sum(v, lo, hi, total)
    assert x.sum() == pytest.approx(total, abs=1e-7)
    assert np.all(x >= lo - 1e-12) and np.all(x <= hi + 1e-12)
    # no feasible random point is closer
    rng = np.random.default_rng(0)
    for _ in range(20):
        y = project_box_sum(rng.uniform(lo, hi, n) * 3 - 5, lo, hi, total)
        assert np.linalg.norm(x - v) <= np.linalg.norm(y - v) + 1e-7


@given(st.integers(2, 6), st.integers(3, 7), st.data())
def test_log_objective_is_convex(K, L, data):
    coefs, masks = _xi_terms(K, L)
    w1 = -np.array(data.draw(st.lists(st.floats(0, 8), min_size=L - 1, max_size=L - 1)))
    w2 = -np.array(data.draw(st.lists(st.floats(0, 8), min_size=L - 1, max_size=L - 1)))
    f = lambda w: np.exp(_lse_and_grad(coefs, masks, w)[0])
    assert f((w1 + w2) / 2) <= (f(w1) + f(w2)) / 2 + 1e-9


@given(st.integers(2, 5), st.integers(3, 6), st.data())
def test_late_shift_tradeoff(K, L, data):
    # moving one parity unit later never raises E[chi]; moving it into the
    # last slot (absent from Xi) never lowers Xi
    J = 5
    a = np.array(data.draw(st.lists(st.integers(0, J), min_size=L - 1, max_size=L - 1)))
    i = data.draw(st.integers(0, L - 3))
    j = data.draw(st.integers(i + 1, L - 2))
    if a[i] == 0 or a[j] == J:
        return
    b = a.copy()
    b[i] -= 1
    b[j] += 1
    xa, ca = evaluate_allocation(a, K, L)
    xb, cb = evaluate_allocation(b, K, L)
    assert cb <= ca * (1 + 1e-12)
    if j == L - 2:
        assert xb >= xa * (1 - 1e-12)


def test_late_shift_can_lower_complexity():
    # a shift between interior slots may reduce Xi as well
    xa, ca = evaluate_allocation([2, 0, 0], 2, 4)
    xb, cb = evaluate_allocation([1, 1, 0], 2, 4)
    assert (xa, ca) == (9.5, 4.0) and (xb, cb) == (9.0, 3.0)


def test_relaxation_bound_and_tightening():
    rng = np.random.default_rng(3)
    for _ in range(8):
        K, L, J = int(rng.integers(2, 6)), int(rng.integers(3, 6)), int(rng.integers(2, 6))
        b = int(rng.integers(J, L * J - 1))
        if L * J - b > (L - 1) * J:
            continue
        loose = None
        for p in (10.0, 1.0, 0.3):
            try:
                ora = exhaustive_oracle(K, L, J, b, p)
                _, relaxed_xi = solve_relaxed(K, L, J, b, p)
            except InfeasibleError:
                break
            assert relaxed_xi <= ora.xi * (1 + 1e-7)
            if loose is not None:
                assert ora.xi >= loose - 1e-9
            loose = ora.xi


def test_batch_metrics_agree_with_scalar():
    A = compositions(4, 9, 4)
    xi, chi = _batch_metrics(A, 4, 5)
    for row, x, c in zip(A, xi, chi):
        ex, ec = evaluate_allocation(row, 4, 5)
        assert x == pytest.approx(ex, rel=1e-12) and c == pytest.approx(ec, rel=1e-12, abs=1e-300)


def test_to_dict_is_json_ready():
    import json
    d = optimize_lengths(5, 4, 4, 9, 2.0).to_dict()
    assert json.loads(json.dumps(d))["a"] == d["a"]
