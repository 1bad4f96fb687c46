"""Pipeline: quantizer attachment/initialization, the four optimization
strategies and their contracts, bias tuning, unit partitioning and the
end-to-end driver."""

import itertools

import numpy as np
import pytest

from tinyptq.engine import Graph, LayerSpec, build_model, fold_batchnorm, forward
from tinyptq.pipeline import (
    ConfigError,
    PipelineConfig,
    attach_and_init,
    bias_tune,
    cle_equalize,
    make_units,
    optimize,
    run_pipeline,
)
from tinyptq.pipeline.strategies import BitDescent
from tinyptq.quant import PER_CHANNEL, SYMMETRIC, integer_codes, quantize

from conftest import small_conv_net


def _calib(rng, g, n=64):
    return rng.normal(size=(n,) + tuple(g.input_shape))


def _cfg(**kw):
    base = dict(calib_size=64, batch_size=16, iters=120, eval_every=40, cle=False, bias_tune=False)
    base.update(kw)
    return PipelineConfig(**base)


# -- attach_and_init ----------------------------------------------------------

def test_weight_quantizers_disabled_at_32_bits(rng):
    g = small_conv_net()
    qg = attach_and_init(g, _calib(rng, g), _cfg(b_w=32, b_a=8, strategy="qparam"))
    w = g.layers[0].params["weight"]
    np.testing.assert_array_equal(qg.effective_weight(0), w)


def test_policy_symmetric_per_channel_weights_asymmetric_per_tensor_acts(rng):
    g = small_conv_net()
    qg = attach_and_init(g, _calib(rng, g), _cfg(b_w=4, b_a=4, strategy="qparam"))
    for li, q in qg.weight_q.items():
        assert q.scheme == "symmetric" and q.granularity == "per_channel"
        assert q.groups == g.layers[li].params["weight"].shape[-1]
        assert np.all(q.zero_point == 0)
    for e, q in qg.act_q.items():
        assert q.scheme == "asymmetric" and q.granularity == "per_tensor"
        assert q.groups == 1


def test_post_relu_edge_has_zero_alpha(rng):
    g = small_conv_net()
    qg = attach_and_init(g, _calib(rng, g), _cfg(b_w=8, b_a=8, strategy="qparam", a_init="minmax"))
    relu_edge = 2  # output of the first relu
    q = qg.act_q[relu_edge]
    # all observations non-negative -> alpha = 0 -> zero_point at n
    assert q.zero_point[0] == q.n


def test_init_8w8a_res8_logit_error_within_5pct(rng):
    g = build_model("res8", seed=3)
    folded = fold_batchnorm(g)
    calib = rng.normal(size=(64, 32, 32, 3))
    qg = attach_and_init(folded, calib, _cfg(b_w=8, b_a=8, strategy="qparam"))
    fp = forward(folded, calib[:16])
    qz = qg.forward(calib[:16])
    assert np.linalg.norm(qz - fp) / np.linalg.norm(fp) <= 0.05


def test_empty_calibration_rejected(rng):
    g = small_conv_net()
    with pytest.raises(ValueError):
        attach_and_init(g, np.zeros((0, 8, 8, 2)), _cfg(strategy="qparam"))


def test_flatten_output_carries_no_quantizer(rng):
    g = fold_batchnorm(build_model("har_cnn", seed=1))
    calib = rng.normal(size=(32, 128, 9))
    qg = attach_and_init(g, calib, _cfg(b_w=8, b_a=8, strategy="qparam", batch_size=16, calib_size=32))
    flatten_id = next(i for i, l in enumerate(g.layers) if l.kind == "flatten")
    assert (flatten_id + 1) not in qg.act_q


# -- unit partitioning ----------------------------------------------------------

def test_res8_blockwise_units():
    g = fold_batchnorm(build_model("res8"))
    units = make_units(g, "blockwise")
    assert [u.name for u in units] == ["stem", "block1", "block2", "block3", "head"]
    head = units[-1]
    assert [g.layers[i].kind for i in head.layer_ids] == ["avgpool", "flatten", "fc"]


def test_dscnn_blockwise_units():
    g = fold_batchnorm(build_model("dscnn"))
    units = make_units(g, "blockwise")
    assert [u.name for u in units] == ["stem", "block1", "block2", "block3", "block4", "head"]


def test_layerwise_units_cover_all_layers():
    g = fold_batchnorm(build_model("res8"))
    units = make_units(g, "layerwise")
    covered = sorted(i for u in units for i in u.layer_ids)
    assert covered == list(range(len(g.layers)))
    assert all(len(u.weighted_ids) == 1 for u in units)


def test_stride2_block_unit_has_single_input_edge():
    g = fold_batchnorm(build_model("res8"))
    units = {u.name: u for u in make_units(g, "blockwise")}
    assert len(units["block2"].in_edges) == 1


def test_opt_bits_blockwise_rejected():
    with pytest.raises(ConfigError):
        PipelineConfig(strategy="bits", granularity="blockwise")


# -- strategy contracts ----------------------------------------------------------

def _per_unit_losses(log, step="optimize"):
    by_unit = {}
    for r in log if isinstance(log, list) else log["records"]:
        if r["step"] == step:
            by_unit.setdefault(r["unit"], []).append(r["loss"])
    return by_unit


@pytest.mark.parametrize("strategy", ["qparam", "weights", "bits", "round"])
def test_strategy_final_mse_never_worse(strategy, rng):
    g = small_conv_net(seed=3)
    calib = _calib(rng, g)
    cfg = _cfg(b_w=4, b_a=4, strategy=strategy)
    qg = attach_and_init(g, calib, cfg)
    qg, log = optimize(qg, g, calib, cfg)
    for unit, losses in _per_unit_losses(log).items():
        assert min(losses[1:] or losses) <= losses[0] + 1e-12, unit


def test_opt_qparam_keeps_symmetric_zero(rng):
    g = small_conv_net(seed=3)
    calib = _calib(rng, g)
    cfg = _cfg(b_w=4, b_a=4, strategy="qparam")
    qg = attach_and_init(g, calib, cfg)
    qg, _ = optimize(qg, g, calib, cfg)
    for q in qg.weight_q.values():
        assert np.all(q.zero_point == 0)


def test_opt_qparam_reduces_mse_on_4bit_fc(rng):
    # the quantized-output loss is a jagged staircase in the scale with a
    # narrow optimum near the MSE init, so the construction run uses a small
    # step and a fine checkpoint cadence to observe the strict decrease
    w = rng.normal(0, 1, (6, 5))
    g = Graph([LayerSpec("fc", "f", [0], {"weight": w, "bias": np.zeros(5)})], (6,), [("f", [0])])
    calib = rng.normal(size=(64, 6))
    cfg = _cfg(b_w=4, b_a=32, strategy="qparam", iters=100, eval_every=5, lr=1e-4)
    qg = attach_and_init(g, calib, cfg)
    qg, log = optimize(qg, g, calib, cfg)
    losses = _per_unit_losses(log)["f"]
    assert min(losses) < losses[0]
    assert losses[-1] <= losses[0]  # best iterate kept


def test_opt_weights_fp_recovers_exactly(rng):
    # with quantization disabled the initial loss is already zero and the
    # weights must not drift
    g = small_conv_net(seed=5)
    calib = _calib(rng, g)
    cfg = _cfg(b_w=32, b_a=32, strategy="weights", iters=30, eval_every=10)
    w_before = [g.layers[i].params["weight"].copy() for i in (0, 2, 4)]
    qg = attach_and_init(g, calib, cfg)
    qg, log = optimize(qg, g, calib, cfg)
    for unit, losses in _per_unit_losses(log).items():
        assert losses[0] == pytest.approx(0.0, abs=1e-24)
        assert min(losses) == pytest.approx(0.0, abs=1e-24)
    for w0, i in zip(w_before, (0, 2, 4)):
        np.testing.assert_array_equal(qg.graph.layers[i].params["weight"], w0)


def test_on_grid_weights_start_at_zero_loss(rng):
    # weights already exactly representable: zero loss at initialization
    # and no parameter drift for opt_weights
    scale = 0.125
    w = (rng.integers(-7, 8, size=(4, 3)) * scale).astype(np.float64)
    g = Graph([LayerSpec("fc", "f", [0], {"weight": w.copy(), "bias": np.zeros(3)})], (4,), [("f", [0])])
    calib = rng.normal(size=(32, 4))
    cfg = _cfg(b_w=4, b_a=32, strategy="weights", iters=50, eval_every=10,
               w_init="minmax", calib_size=32)
    qg = attach_and_init(g, calib, cfg)
    np.testing.assert_allclose(qg.effective_weight(0), w, rtol=0, atol=1e-12)
    qg, log = optimize(qg, g, calib, cfg)
    losses = _per_unit_losses(log)["f"]
    assert losses[0] == pytest.approx(0.0, abs=1e-20)
    np.testing.assert_allclose(qg.effective_weight(0), w, rtol=0, atol=1e-12)


def test_frozen_units_never_change(rng):
    g = small_conv_net(seed=3)
    calib = _calib(rng, g)
    cfg = _cfg(b_w=4, b_a=4, strategy="weights")
    qg = attach_and_init(g, calib, cfg)

    # optimize the first unit only, hash it, then optimize the rest
    units = make_units(g, "layerwise")
    from tinyptq.pipeline.optimize import optimize as full_opt

    qg, _ = full_opt(qg, g, calib, cfg)
    h_first = qg.state_hash(units[0].layer_ids)
    cfg2 = _cfg(b_w=4, b_a=4, strategy="weights", iters=60, eval_every=20)
    qg2, _ = bias_tune(qg, g, calib, cfg2)
    assert qg2.state_hash(units[0].layer_ids) == h_first


# -- opt_round specifics ----------------------------------------------------------

def test_opt_round_hardened_weights_on_grid(rng):
    g = small_conv_net(seed=9)
    calib = _calib(rng, g)
    cfg = _cfg(b_w=4, b_a=32, strategy="round")
    qg = attach_and_init(g, calib, cfg)
    qg, _ = optimize(qg, g, calib, cfg)
    for li, q in qg.weight_q.items():
        w = qg.graph.layers[li].params["weight"]
        codes = w / q.scale_for(w)
        assert np.abs(codes - np.rint(codes)).max() < 1e-9
        assert codes.min() >= q.n - 1e-9 and codes.max() <= q.p + 1e-9


def test_opt_round_initial_hard_model_equals_init(rng):
    from tinyptq.pipeline.optimize import make_units
    from tinyptq.pipeline.strategies import RoundStrategy

    g = small_conv_net(seed=9)
    calib = _calib(rng, g)
    cfg = _cfg(b_w=4, b_a=32, strategy="round")
    qg = attach_and_init(g, calib, cfg)
    unit = make_units(g, "layerwise")[0]
    strat = RoundStrategy(qg, unit, lr=1e-2, iters=100)
    for li in unit.weighted_ids:
        np.testing.assert_allclose(
            strat.weight(li, hard=True), qg.effective_weight(li), rtol=0, atol=1e-12
        )


def test_adaround_regularizer_vanishes_after_annealing(rng):
    g = small_conv_net(seed=9)
    calib = _calib(rng, g)
    cfg = _cfg(b_w=3, b_a=32, strategy="round", iters=400, eval_every=100)
    qg = attach_and_init(g, calib, cfg)

    from tinyptq.pipeline.optimize import make_units
    from tinyptq.pipeline.strategies import RoundStrategy
    from tinyptq.surrogates import softround

    # after a full annealed run, h values should be (almost) binary
    qg2, _ = optimize(qg.copy(), g, calib, cfg)
    # finalize() hardened them; re-derive h from a fresh strategy run
    strat = RoundStrategy(qg, make_units(g, "layerwise")[0], lr=1e-2, iters=cfg.iters)
    assert strat.beta(0) == pytest.approx(20.0)
    assert strat.beta(cfg.iters) == pytest.approx(2.0)


# -- opt_bits specifics ----------------------------------------------------------

def _brute_force_codes(X, target, bias, scale, bits):
    """Independent oracle: exhaustive search over all code vectors, channel
    by channel (channels are separable in the squared error)."""
    n, p = -(1 << (bits - 1)), (1 << (bits - 1)) - 1
    K, C = X.shape[1], target.shape[1]
    best_codes = np.zeros((K, C), dtype=np.int64)
    total = 0.0
    for c in range(C):
        best = None
        for combo in itertools.product(range(n, p + 1), repeat=K):
            y = X @ (scale[c] * np.asarray(combo, dtype=np.float64)) + bias[c]
            err = float(((y - target[:, c]) ** 2).sum())
            if best is None or err < best[0]:
                best = (err, combo)
        best_codes[:, c] = best[1]
        total += best[0]
    return total, best_codes


def test_bit_descent_matches_bruteforce_single_weight(rng):
    # 1 weight, 1 input: enumeration over all 2^b codes
    X = rng.normal(size=(6, 1))
    target = rng.normal(size=(6, 1))
    bias = np.zeros(1)
    scale = np.array([0.3])
    codes0 = np.zeros((1, 1), dtype=np.int64)
    bd = BitDescent(X, target, bias, codes0, scale, bits=3)
    sse, codes, _ = bd.run(sweeps=2, refit=False)
    oracle_sse, oracle_codes = _brute_force_codes(X, target, bias, scale, 3)
    assert sse == pytest.approx(oracle_sse, abs=1e-9)
    assert np.array_equal(codes, oracle_codes)


def test_bit_descent_small_fc_against_oracle(rng):
    # 8 weights total (4 per output channel), 3 bits; targets generated by a
    # nearby real weight vector as in the actual pipeline (the init codes are
    # its quantization). Coordinate descent can hit genuine local optima on
    # such lattices; those instances are flagged, never silently better.
    flagged, trials = 0, 8
    for trial in range(trials):
        X = rng.normal(size=(10, 4))
        w_true = rng.normal(size=(4, 2))
        target = X @ w_true + 0.05 * rng.normal(size=(10, 2))
        bias = np.zeros(2)
        scale = np.array([0.4, 0.25])
        codes0 = np.clip(np.rint(w_true / scale), -4, 3).astype(np.int64)
        bd = BitDescent(X, target, bias, codes0.copy(), scale.copy(), bits=3)
        sse, codes, _ = bd.run(sweeps=4, refit=False)
        oracle_sse, _ = _brute_force_codes(X, target, bias, scale, 3)
        assert sse >= oracle_sse - 1e-9  # descent can never beat the oracle
        if sse > oracle_sse + 1e-9:
            flagged += 1  # documented local optimum of coordinate descent
    assert flagged <= trials // 2, f"{flagged}/{trials} local optima; descent looks broken"


def test_bit_descent_codes_stay_representable(rng):
    g = small_conv_net(seed=3)
    calib = _calib(rng, g)
    cfg = _cfg(b_w=3, b_a=32, strategy="bits")
    qg = attach_and_init(g, calib, cfg)
    qg, _ = optimize(qg, g, calib, cfg)
    for li, q in qg.weight_q.items():
        codes = integer_codes(qg.graph.layers[li].params["weight"], q)
        assert codes.min() >= q.n and codes.max() <= q.p


def test_bit_descent_scale_refit_reduces_error(rng):
    X = rng.normal(size=(40, 6))
    true_w = rng.normal(size=(6, 3))
    target = X @ true_w
    bias = np.zeros(3)
    scale = np.full(3, 0.21)
    codes0 = np.clip(np.rint(true_w / scale), -8, 7).astype(np.int64)
    no_refit = BitDescent(X, target, bias, codes0.copy(), scale.copy(), bits=4).run(2, refit=False)[0]
    refit = BitDescent(X, target, bias, codes0.copy(), scale.copy(), bits=4).run(2, refit=True)[0]
    assert refit <= no_refit + 1e-12


# -- bias tuning ----------------------------------------------------------------

def test_bias_tune_disabled_quant_is_fixed_point(rng):
    g = small_conv_net(seed=4)
    calib = _calib(rng, g)
    cfg = _cfg(b_w=32, b_a=32, strategy="qparam", iters=40, eval_every=10)
    qg = attach_and_init(g, calib, cfg)
    before = [qg.graph.layers[i].params["bias"].copy() for i in (0, 2, 4)]
    qg, log = bias_tune(qg, g, calib, cfg)
    losses = [r["loss"] for r in log]
    assert losses[0] == pytest.approx(0.0, abs=1e-24)
    for b0, i in zip(before, (0, 2, 4)):
        np.testing.assert_array_equal(qg.graph.layers[i].params["bias"], b0)


def test_bias_tune_absorbs_constant_output_offset(rng):
    # constructed net whose only quantization error is a constant output
    # offset: bias tuning must drive the end-to-end MSE to ~0
    w = np.eye(3)
    g = Graph([LayerSpec("fc", "f", [0], {"weight": w, "bias": np.zeros(3)})], (3,), [("f", [0])])
    calib = rng.normal(size=(48, 3))
    cfg = _cfg(b_w=32, b_a=32, strategy="qparam", iters=1500, eval_every=250,
               calib_size=48, lr=1e-2)
    qg = attach_and_init(g, calib, cfg)
    qg.graph.layers[0].params["bias"][:] = np.array([0.5, -0.25, 0.125])  # injected offset
    qg, log = bias_tune(qg, g, calib, cfg)
    losses = [r["loss"] for r in log]
    assert losses[0] > 0.01
    assert min(losses) < 1e-6


def test_bias_tune_touches_only_biases(rng):
    g = small_conv_net(seed=4)
    calib = _calib(rng, g)
    cfg = _cfg(b_w=4, b_a=4, strategy="qparam", iters=60, eval_every=20)
    qg = attach_and_init(g, calib, cfg)
    h_before = qg.state_hash()
    w_before = [qg.graph.layers[i].params["weight"].copy() for i in (0, 2, 4)]
    qg, log = bias_tune(qg, g, calib, cfg)
    assert qg.state_hash() == h_before
    for w0, i in zip(w_before, (0, 2, 4)):
        np.testing.assert_array_equal(qg.graph.layers[i].params["weight"], w0)
    losses = [r["loss"] for r in log]
    assert min(losses) <= losses[0] + 1e-15


# -- run_pipeline -----------------------------------------------------------------

@pytest.mark.parametrize("granularity", ["layerwise", "blockwise"])
def test_res8_low_bit_optimization_with_skip_units(granularity, rng):
    # res8's stride-2 blocks make units with several crossing input edges
    # (skip conv + residual add); the frontier must keep all of them alive
    g = build_model("res8", seed=2)
    calib = rng.normal(size=(24, 32, 32, 3))
    cfg = PipelineConfig(b_w=4, b_a=4, strategy="qparam", iters=20, eval_every=10,
                         calib_size=24, batch_size=8, cle=False, bias_tune=False,
                         granularity=granularity, seed=1)
    qg, log = run_pipeline(g, calib, cfg)
    recs = [r for r in log["records"] if r["step"] == "optimize"]
    units = {r["unit"] for r in recs}
    if granularity == "blockwise":
        assert units == {"stem", "block1", "block2", "block3", "head"}
    for u in units:
        losses = [r["loss"] for r in recs if r["unit"] == u]
        assert losses[-1] <= losses[0] + 1e-12
    assert len(qg.frozen) == sum(1 for l in qg.graph.layers if l.weighted)
    x = rng.normal(size=(2, 32, 32, 3))
    assert np.isfinite(qg.forward(x)).all()


def test_opt_bits_on_dwconv_and_conv1d_units(rng):
    # exercises the per-channel (non-shared) and conv1d design matrices
    layers = [
        LayerSpec("dwconv2d", "dw", [0],
                  {"weight": rng.normal(0, 0.5, (3, 3, 3)), "bias": rng.normal(0, 0.1, 3)},
                  (3, 3), (1, 1), "same"),
        LayerSpec("relu", "r", [1]),
    ]
    g = Graph(layers, (6, 6, 3), [("dw", [0, 1])])
    calib = rng.normal(size=(32, 6, 6, 3))
    cfg = _cfg(b_w=3, b_a=32, strategy="bits", calib_size=32)
    qg = attach_and_init(g, calib, cfg)
    qg, log = optimize(qg, g, calib, cfg)
    losses = _per_unit_losses(log)["dw"]
    assert losses[-1] <= losses[0] + 1e-12

    layers1d = [LayerSpec("conv1d", "c", [0],
                          {"weight": rng.normal(0, 0.5, (3, 4, 5)), "bias": rng.normal(0, 0.1, 5)},
                          (3,), (1,), "valid")]
    g1 = Graph(layers1d, (10, 4), [("c", [0])])
    calib1 = rng.normal(size=(32, 10, 4))
    qg1 = attach_and_init(g1, calib1, cfg)
    qg1, log1 = optimize(qg1, g1, calib1, cfg)
    losses1 = _per_unit_losses(log1)["c"]
    assert losses1[-1] <= losses1[0] + 1e-12


def test_bit_descent_linearization_matches_layer_forward(rng):
    # the (M, K) / (M, C, K) design matrices must reproduce the layer output
    from tinyptq.engine.graph import layer_forward
    from tinyptq.pipeline.optimize import _linearize

    dw = LayerSpec("dwconv2d", "dw", [0],
                   {"weight": rng.normal(0, 0.5, (3, 3, 2)), "bias": np.zeros(2)},
                   (3, 3), (2, 2), "same")
    x = rng.normal(size=(2, 5, 5, 2))
    X, shared = _linearize(dw, x)
    assert not shared
    w = dw.params["weight"].reshape(9, 2)
    lin = np.einsum("mck,kc->mc", X, w.reshape(3, 3, 2).reshape(9, 2))
    ref = layer_forward(dw, [x]).reshape(-1, 2)
    np.testing.assert_allclose(lin, ref, atol=1e-12)

    cv = LayerSpec("conv2d", "cv", [0],
                   {"weight": rng.normal(0, 0.5, (3, 3, 2, 4)), "bias": np.zeros(4)},
                   (3, 3), (1, 1), "same")
    X2, shared2 = _linearize(cv, x)
    assert shared2
    lin2 = X2 @ cv.params["weight"].reshape(-1, 4)
    ref2 = layer_forward(cv, [x]).reshape(-1, 4)
    np.testing.assert_allclose(lin2, ref2, atol=1e-12)

    c1 = LayerSpec("conv1d", "c1", [0],
                   {"weight": rng.normal(0, 0.5, (3, 2, 3)), "bias": np.zeros(3)},
                   (3,), (1,), "valid")
    x1 = rng.normal(size=(2, 7, 2))
    X3, _ = _linearize(c1, x1)
    lin3 = X3 @ c1.params["weight"].reshape(-1, 3)
    ref3 = layer_forward(c1, [x1]).reshape(-1, 3)
    np.testing.assert_allclose(lin3, ref3, atol=1e-12)


def test_pipeline_32_32_matches_fp(rng):
    g = build_model("res8", seed=3)
    calib = rng.normal(size=(32, 32, 32, 3))
    cfg = PipelineConfig(b_w=32, b_a=32, strategy="qparam", iters=10, eval_every=5,
                         calib_size=32, batch_size=16, cle=True, bias_tune=True)
    qg, _ = run_pipeline(g, calib, cfg)
    x = rng.normal(size=(8, 32, 32, 3))
    fp = forward(g, x)
    qz = qg.forward(x)
    assert np.abs(qz - fp).max() / np.abs(fp).max() < 1e-5


def test_pipeline_init_only_res8_8w8a(rng):
    g = build_model("res8", seed=3)
    calib = rng.normal(size=(64, 32, 32, 3))
    cfg = PipelineConfig(b_w=8, b_a=8, strategy="round", iters=0, calib_size=64,
                         batch_size=32, cle=True, bias_tune=False)
    qg, log = run_pipeline(g, calib, cfg)
    folded = cle_equalize(fold_batchnorm(g))
    fp = forward(folded, calib[:16])
    qz = qg.forward(calib[:16])
    assert np.linalg.norm(qz - fp) / np.linalg.norm(fp) <= 0.05
    assert log["records"] == []  # iters=0: no optimization happened


def test_pipeline_deterministic_per_seed(rng):
    g = small_conv_net(seed=6)
    calib = rng.normal(size=(48, 8, 8, 2))
    cfg = dict(b_w=4, b_a=4, strategy="round", iters=60, eval_every=20,
               calib_size=48, batch_size=16, cle=False, bias_tune=True, seed=11)
    qg1, log1 = run_pipeline(g, calib, PipelineConfig(**cfg))
    qg2, log2 = run_pipeline(g, calib, PipelineConfig(**cfg))
    assert log1 == log2
    assert qg1.state_hash() == qg2.state_hash()
    x = rng.normal(size=(4, 8, 8, 2))
    np.testing.assert_array_equal(qg1.forward(x), qg2.forward(x))


def test_pipeline_different_seed_changes_log(rng):
    g = small_conv_net(seed=6)
    calib = rng.normal(size=(48, 8, 8, 2))

    def run(seed):
        cfg = PipelineConfig(b_w=3, b_a=3, strategy="weights", iters=60, eval_every=20,
                             calib_size=32, batch_size=8, cle=False, bias_tune=False, seed=seed)
        return run_pipeline(g, calib, cfg)[1]

    assert run(1) != run(2)
