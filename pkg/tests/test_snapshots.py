import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from qlrom.snapshots import (
    BlockScaler,
    LayoutError,
    SnapshotDataset,
    SnapshotFormatError,
    TimeGrid,
    block_layout,
    estimate_derivatives,
    load_dataset,
    save_dataset,
    save_layout,
)


def make_ds(states, times, blocks=None, deriv=None):
    states = np.asarray(states, dtype=float)
    blocks = blocks or block_layout([("x", states.shape[0])])
    return SnapshotDataset(states, TimeGrid(times), blocks, deriv)


# TimeGrid ---------------------------------------------------------------------

def test_grid_requires_increasing():
    with pytest.raises(ValueError, match="strictly increasing"):
        TimeGrid([0.0, 0.0])
    with pytest.raises(ValueError, match="strictly increasing"):
        TimeGrid([0.0, 1.0, 0.5])
    with pytest.raises(ValueError, match="at least 2"):
        TimeGrid([0.0])


# Dataset invariants -----------------------------------------------------------

def test_dataset_shape_checks():
    with pytest.raises(ValueError, match="columns"):
        make_ds(np.zeros((3, 4)), [0.0, 1.0])
    with pytest.raises(ValueError, match="derivatives shape"):
        make_ds(np.zeros((3, 2)), [0.0, 1.0], deriv=np.zeros((3, 3)))


def test_block_layout_validation():
    with pytest.raises(LayoutError, match="cover"):
        SnapshotDataset(np.zeros((4, 2)), TimeGrid([0, 1]),
                        block_layout([("a", 3)]))
    with pytest.raises(LayoutError, match="duplicate"):
        block_layout([("a", 2), ("a", 2)])
    with pytest.raises(LayoutError, match="non-positive"):
        block_layout([("a", 0)])


def test_dataset_block_views():
    ds = make_ds(np.arange(8.0).reshape(4, 2), [0.0, 1.0],
                 block_layout([("X", 3), ("T", 1)]))
    assert ds.block_names == ("X", "T")
    assert np.array_equal(ds.block_states("T"), [[6.0, 7.0]])
    with pytest.raises(KeyError):
        ds.block("missing")


# CSV persistence ---------------------------------------------------------------

def test_load_minimal_csv(tmp_path):
    p = tmp_path / "tiny.csv"
    p.write_text("t,x:1,x:2,x:3\n0,1,2,3\n1,4,5,6\n")
    ds = load_dataset(p)
    assert ds.n == 3 and ds.n_times == 2
    assert np.array_equal(ds.states, [[1, 4], [2, 5], [3, 6]])


def test_load_rejects_degenerate_grid(tmp_path):
    p = tmp_path / "bad.csv"
    p.write_text("t,x:1\n0,1\n0,2\n")
    with pytest.raises(ValueError, match="not strictly increasing"):
        load_dataset(p)


def test_load_reports_parse_position(tmp_path):
    p = tmp_path / "bad.csv"
    p.write_text("t,x:1,x:2\n0,1,2\n1,oops,4\n")
    with pytest.raises(SnapshotFormatError, match=r"row 3, col 2"):
        load_dataset(p)


def test_load_rejects_wrong_layout(tmp_path, rng):
    p = tmp_path / "data.csv"
    ds = make_ds(rng.normal(size=(4, 3)), [0.0, 0.5, 1.0],
                 block_layout([("X", 2), ("T", 2)]))
    save_dataset(ds, p)
    layout = tmp_path / "layout.json"
    save_layout(block_layout([("X", 3), ("T", 1)]), layout)
    with pytest.raises(LayoutError, match="do not match"):
        load_dataset(p, layout=layout)


def test_two_block_reactor_layout(tmp_path, rng):
    # 400 rows split as X:200, T:200, the reactor-style two-variable layout.
    ds = make_ds(rng.normal(size=(400, 3)), [0.0, 1.0, 2.0],
                 block_layout([("X", 200), ("T", 200)]))
    p = tmp_path / "reactor.csv"
    save_dataset(ds, p, layout_path=tmp_path / "reactor.layout.json")
    back = load_dataset(p, layout=tmp_path / "reactor.layout.json")
    assert back.block_names == ("X", "T")
    assert back.block("X").size == 200 and back.block("T").size == 200


def test_save_load_round_trip_bit_exact(tmp_path, rng):
    states = rng.normal(size=(5, 7)) * 10.0 ** rng.integers(-8, 8, size=(5, 7))
    deriv = rng.normal(size=(5, 7))
    ds = make_ds(states, np.sort(rng.uniform(0, 10, 7)),
                 block_layout([("a", 2), ("b", 3)]), deriv)
    p = tmp_path / "data.csv"
    save_dataset(ds, p)
    back = load_dataset(p)
    assert np.array_equal(back.states, ds.states)
    assert np.array_equal(back.derivatives, ds.derivatives)
    assert np.array_equal(back.grid.instants, ds.grid.instants)
    assert back.blocks == ds.blocks
    # second round trip is byte-identical
    p2 = tmp_path / "data2.csv"
    save_dataset(back, p2)
    assert p.read_bytes() == p2.read_bytes()


# Derivative estimation ----------------------------------------------------------

def test_constant_trajectory_zero_derivatives():
    ds = make_ds(np.full((2, 6), 3.7), np.linspace(0, 1, 6))
    out = estimate_derivatives(ds)
    assert np.allclose(out.derivatives, 0.0, atol=1e-12)


def test_quadratic_exact():
    t = np.arange(0.0, 1.05, 0.1)
    ds = make_ds((t**2)[None, :], t)
    out = estimate_derivatives(ds, "central-2")
    # central differences are exact for quadratics; t=0.5 is index 5
    assert abs(out.derivatives[0, 5] - 1.0) < 1e-10
    assert np.allclose(out.derivatives, 2 * t, rtol=1e-10, atol=1e-10)


def test_polynomial_exactness_nonuniform(rng):
    t = np.sort(rng.uniform(0, 2, 15))
    coeffs = rng.normal(size=3)
    x = coeffs[0] + coeffs[1] * t + coeffs[2] * t**2
    dx = coeffs[1] + 2 * coeffs[2] * t
    out = estimate_derivatives(make_ds(x[None, :], t), "central-2")
    scale = max(1.0, np.abs(dx).max())
    assert np.max(np.abs(out.derivatives[0] - dx)) / scale < 1e-10


def test_second_order_convergence():
    errors = {}
    for h in (0.1, 0.05):
        t = np.arange(0.0, 2.0 + h / 2, h)
        ds = make_ds(np.sin(t)[None, :], t)
        out = estimate_derivatives(ds, "central-2")
        interior = slice(1, -1)
        errors[h] = np.max(np.abs(out.derivatives[0, interior] - np.cos(t)[interior]))
    order = np.log2(errors[0.1] / errors[0.05])
    assert 1.8 <= order <= 2.2


def test_one_sided_schemes():
    t = np.linspace(0, 1, 5)
    x = 2.0 * t
    fwd = estimate_derivatives(make_ds(x[None, :], t), "forward-1")
    bwd = estimate_derivatives(make_ds(x[None, :], t), "backward-1")
    assert np.allclose(fwd.derivatives, 2.0)
    assert np.allclose(bwd.derivatives, 2.0)


def test_existing_derivatives_protected(rng):
    ds = make_ds(rng.normal(size=(2, 5)), np.linspace(0, 1, 5),
                 deriv=np.zeros((2, 5)))
    with pytest.raises(ValueError, match="overwrite"):
        estimate_derivatives(ds)
    out = estimate_derivatives(ds, overwrite=True)
    assert not np.array_equal(out.derivatives, ds.derivatives)


def test_grid_too_short_for_central():
    ds = make_ds(np.zeros((1, 2)), [0.0, 1.0])
    with pytest.raises(ValueError, match="length >= 3"):
        estimate_derivatives(ds, "central-2")
    # auto falls back to forward-1
    assert estimate_derivatives(ds, "auto").derivatives is not None


# Scaling -------------------------------------------------------------------------

def test_constant_block_mean_std():
    ds = make_ds(np.full((2, 4), 5.0), np.linspace(0, 1, 4))
    sc = BlockScaler("mean-std").fit(ds)
    assert sc.shifts_[0] == 5.0 and sc.scales_[0] == 1.0


def test_unit_range_min_max():
    ds = make_ds(np.array([[0.0, 1.0]]), [0.0, 1.0])
    sc = BlockScaler("min-max").fit(ds)
    assert sc.shifts_[0] == 0.0 and sc.scales_[0] == 1.0


def test_temperature_range_min_max():
    # block spanning [550, 810] K -> shift 550, scale 260
    T = np.linspace(550.0, 810.0, 12).reshape(3, 4)
    ds = make_ds(T, np.linspace(0, 1, 4), block_layout([("T", 3)]))
    sc = BlockScaler("min-max").fit(ds)
    assert sc.shifts_[0] == 550.0
    assert sc.scales_[0] == 260.0


def test_derivatives_scaled_not_shifted():
    T = np.linspace(550.0, 810.0, 8).reshape(2, 4)
    dT = np.array([[4.0, -2.0, 0.5, 1.0], [1.0, 1.0, 1.0, 1.0]])
    ds = make_ds(T, np.linspace(0, 1, 4), block_layout([("T", 2)]), dT)
    sc = BlockScaler("min-max").fit(ds)
    out = sc.transform(ds)
    assert np.allclose(out.derivatives, dT / 260.0, rtol=1e-14)


def test_scaled_derivatives_consistent_with_finite_differences(rng):
    # chain rule: differentiating scaled states == scaling the derivatives
    t = np.linspace(0, 1, 21)
    states = 550.0 + 260.0 * np.vstack([np.sin(t), np.cos(2 * t)])
    ds = make_ds(states, t, block_layout([("T", 2)]))
    sc = BlockScaler("min-max").fit(ds)
    a = estimate_derivatives(sc.transform(ds)).derivatives
    b = sc.transform(estimate_derivatives(ds)).derivatives
    assert np.allclose(a, b, rtol=1e-12, atol=1e-12)


def test_identity_mode():
    ds = make_ds(np.array([[1.0, 2.0]]), [0.0, 1.0])
    sc = BlockScaler("none").fit(ds)
    out = sc.transform(ds)
    assert np.array_equal(out.states, ds.states)


def test_block_mismatch_rejected(rng):
    ds1 = make_ds(rng.normal(size=(4, 3)), [0, 1, 2], block_layout([("a", 4)]))
    ds2 = make_ds(rng.normal(size=(4, 3)), [0, 1, 2], block_layout([("a", 2), ("b", 2)]))
    sc = BlockScaler("min-max").fit(ds1)
    with pytest.raises(LayoutError, match="fitted on blocks"):
        sc.transform(ds2)


@settings(max_examples=25, deadline=None)
@given(
    mode=st.sampled_from(["none", "min-max", "mean-std"]),
    seed=st.integers(0, 2**31 - 1),
    magnitude=st.floats(-6, 6),
)
def test_scaling_round_trip_property(mode, seed, magnitude):
    r = np.random.default_rng(seed)
    states = 10.0**magnitude * r.normal(size=(5, 6)) + r.normal() * 10.0**magnitude
    deriv = 10.0**magnitude * r.normal(size=(5, 6))
    ds = make_ds(states, np.linspace(0, 1, 6),
                 block_layout([("a", 2), ("b", 3)]), deriv)
    sc = BlockScaler(mode).fit(ds)
    back = sc.inverse_transform(sc.transform(ds))
    scale = np.abs(ds.states).max() + 1e-300
    assert np.max(np.abs(back.states - ds.states)) / scale < 1e-12
    dscale = np.abs(ds.derivatives).max() + 1e-300
    assert np.max(np.abs(back.derivatives - ds.derivatives)) / dscale < 1e-12


def test_scaler_dict_round_trip(rng):
    ds = make_ds(rng.normal(size=(4, 5)), np.linspace(0, 1, 5),
                 block_layout([("a", 1), ("b", 3)]))
    sc = BlockScaler("mean-std").fit(ds)
    back = BlockScaler.from_dict(sc.to_dict())
    assert back.blocks_ == sc.blocks_
    assert np.array_equal(back.shifts_, sc.shifts_)
    assert np.array_equal(back.scales_, sc.scales_)


def test_sklearn_params_round_trip():
    sc = BlockScaler(mode="mean-std")
    assert sc.get_params() == {"mode": "mean-std"}
    sc.set_params(mode="none")
    assert sc.mode == "none"
