import math

import numpy as np
import pytest
import scipy.sparse as sp

from lada.lifting import BASELINE, LiftedChain, build_baseline_chain, build_grid_chain, build_lada_chain, stationary
from lada.metrics import (
    ChainTooLargeError,
    MetricsReport,
    axis_cut_conductance,
    brute_force_conductance,
    check_fill_mix_bound,
    fill_mix_bound,
    fill_time,
    min_power_entry,
    mixing_time,
    report,
    scaling_fit,
)
from lada.topology import classify_neighbors, geometric_network, make_grid, sample_geometric


def _two_state():
    return LiftedChain(sp.csr_matrix(np.full((2, 2), 0.5)), np.arange(2), BASELINE)


def test_two_state_chain():
    chain = _two_state()
    assert mixing_time(chain, 1e-6) == 1
    assert fill_time(chain, 0.5) == 1
    assert check_fill_mix_bound(chain, 1e-6, 0.9)
    assert brute_force_conductance(chain, stationary(chain)) == pytest.approx(1.0)


def test_grid_mixing_is_linear_in_k():
    times = [mixing_time(build_grid_chain(k), 1e-3) for k in (4, 8, 16)]
    for a, b in zip(times, times[1:]):
        assert 1.5 <= b / a <= 2.6


@pytest.mark.parametrize("k,eps,c", [(8, 1e-3, 0.5), (4, 1e-6, 0.9), (4, 1e-3, 0.5)])
def test_fill_mix_inequality(k, eps, c):
    assert check_fill_mix_bound(build_grid_chain(k), eps, c)


@pytest.mark.parametrize("k", [4, 8])
def test_grid_fill_time_horizon(k):
    chain = build_grid_chain(k)
    assert fill_time(chain, 1 - 2**-12) <= 6 * k
    assert min_power_entry(chain, 6 * k) >= 2**-12 / (4 * k * k)


def test_monotone_in_tolerance():
    chain = build_grid_chain(6)
    mix = [mixing_time(chain, e) for e in (1e-1, 1e-3, 1e-6)]
    fill = [fill_time(chain, c) for c in (0.9, 0.5, 0.1)]
    assert mix == sorted(mix) and fill == sorted(fill)


def test_state_cap():
    with pytest.raises(ChainTooLargeError):
        mixing_time(build_grid_chain(8), 0.1, state_cap=100)


def test_three_cycle_singleton_cuts_symmetric():
    P = np.array([[0.5, 0.25, 0.25], [0.25, 0.5, 0.25], [0.25, 0.25, 0.5]])
    chain = LiftedChain(sp.csr_matrix(P), np.arange(3), BASELINE)
    pi = stationary(chain)
    # every singleton cut: Q = 1/3 * 1/2, pi(S) pi(S^c) = 2/9
    assert brute_force_conductance(chain, pi) == pytest.approx((1 / 6) / (2 / 9))


def test_dumbbell_bridge_is_bottleneck():
    left = [[0.1, 0.1], [0.15, 0.12], [0.12, 0.17], [0.18, 0.18]]
    right = [[0.82, 0.1], [0.87, 0.12], [0.84, 0.17], [0.9, 0.18]]
    bridge = [[0.3, 0.15], [0.45, 0.15], [0.6, 0.15], [0.72, 0.15]]
    net = geometric_network(np.array(left + bridge + right), 0.16)
    chain = build_baseline_chain(net)
    pi = stationary(chain)
    phi = axis_cut_conductance(chain, net.positions, pi)
    assert phi < 0.2
    assert brute_force_conductance(chain, pi) <= phi + 1e-12


@pytest.mark.parametrize("seed", range(5))
def test_brute_force_below_axis_cut(seed):
    net = sample_geometric(12, 0.6, seed=seed)
    chain = build_baseline_chain(net)
    pi = stationary(chain)
    assert brute_force_conductance(chain, pi) <= axis_cut_conductance(chain, net.positions, pi) + 1e-12


def test_resistance_floor_on_grid():
    chain = build_grid_chain(4)
    rep = report(chain, make_grid(4).positions)
    assert rep.t_fill >= rep.resistance_lower * 0.5
    assert '"resistance_lower"' in rep.to_json()


def test_scaling_fit_exact_powers():
    ks = np.array([4, 8, 16, 32])
    lin = scaling_fit(np.c_[ks, 3 * ks])
    assert lin.slope == pytest.approx(1.0) and lin.r2 == pytest.approx(1.0)
    assert scaling_fit(np.c_[ks, 0.5 * ks**2]).slope == pytest.approx(2.0)
    with pytest.raises(ValueError):
        scaling_fit([(1, 1), (2, 2)])


def test_lada_fill_time_finite():
    net = sample_geometric(256, 0.3, seed=2)
    chain = build_lada_chain(net, classify_neighbors(net), 0.15)
    assert fill_time(chain, 0.9) is not None


def test_fill_mix_bound_formula():
    assert fill_mix_bound(1e-3, 0.5, 10) == pytest.approx((math.log(1e3) / math.log(2) + 1) * 10)
    assert MetricsReport().resistance_lower is None
