"""Exit criteria, each run at its stated tolerance.

The conftest summary hook prints one PASS/FAIL line per criterion.
"""

import time

import numpy as np
import pytest

from diamond.attention import AttentionParams, BiAttentionConfig, bi_attention, mask_sparsity, attention_weights
from diamond.checkpoint import load_checkpoint, save_checkpoint
from diamond.config import BranchSet, ModelConfig, full_size_config
from diamond.data import (
    SynthConfig,
    decode_volume,
    encode_volume,
    generate_synthetic,
    load_volume,
    propensity_split,
    read_manifest,
    save_volume,
    synthesize,
)
from diamond.ablation import run_ablation
from diamond.errors import CheckpointError, VolumeFormatError, VolumeTruncatedError
from diamond.gradcheck import check_gradients
from diamond.metrics import compute_metrics, roc_auc
from diamond.model import DiaMond, count_parameters
from diamond.regbn import RegBNState, regbn_apply, regbn_fit_step
from diamond.tensor import (
    Tensor,
    concat,
    cross_entropy,
    exp,
    gelu,
    getitem,
    layer_norm,
    log,
    log_softmax,
    masked_scale,
    matmul,
    softmax,
    stack,
    tsum,
)
from diamond.training import Dataset, TrainConfig, evaluate, train
from oracles import brute_force, naive_attention

pytestmark = pytest.mark.acceptance

SPLIT_CANDIDATES = 200


def split_datasets(synth_cfg):
    data = synthesize(synth_cfg)
    split = propensity_split(data.records, n_candidates=SPLIT_CANDIDATES, seed=0)
    parts = {}
    for name in ("train", "val", "test"):
        idx = np.array([i for i, r in enumerate(data.records) if split.assignment[r.id] == name])
        parts[name] = Dataset(data.mri[idx], data.pet[idx], data.labels[idx])
    return parts


def random_attention_params(rng, f=8, heads=2):
    return AttentionParams(*[Tensor(rng.uniform(-1, 1, (f, f)) / np.sqrt(f)) for _ in range(4)], n_heads=heads)


# -- 1 --------------------------------------------------------------------------------

def _op_cases(rng):
    def t(*shape, lo=-2.0, hi=2.0):
        return Tensor(rng.uniform(lo, hi, shape), requires_grad=True)

    def w(*shape):
        return Tensor(rng.normal(size=shape))

    a, b, c = t(3, 4), t(4, 5), t(4)
    pos = t(3, 4, lo=0.5, hi=2.0)
    g, bias = Tensor(rng.uniform(0.5, 1.5, 4), requires_grad=True), t(4)
    w34, w35 = w(3, 4), w(3, 5)
    mask = (rng.random((3, 4)) > 0.5).astype(float)
    idx = (np.array([0, 2, 2]), np.array([1, 3, 3]))
    labels = np.array([0, 3, 1])
    return {
        "add/sub/mul/div/pow": (lambda: tsum((a + c) * a - a / (c * c + 1.0) + a**3), [a, c]),
        "exp/log": (lambda: tsum(exp(pos) + log(pos)), [pos]),
        "matmul": (lambda: tsum(matmul(a, b) * w35), [a, b]),
        "softmax": (lambda: tsum(softmax(a) * w34), [a]),
        "log_softmax": (lambda: tsum(log_softmax(a) * w34), [a]),
        "layer_norm": (lambda: tsum(layer_norm(a, g, bias) * w34), [a, g, bias]),
        "gelu": (lambda: tsum(gelu(a) * w34), [a]),
        "masked_scale": (lambda: tsum(masked_scale(a, mask) * w34), [a]),
        "sum/mean": (lambda: tsum(a.mean(axis=0, keepdims=True) * a) + tsum(a.sum(axis=1) * a.sum(axis=1)), [a]),
        "reshape/transpose/swapaxes": (lambda: tsum(a.reshape(2, 6).T.swapaxes(0, 1).reshape(3, 4) * w34), [a]),
        "getitem": (lambda: tsum(getitem(a, idx) * Tensor([1.0, 2.0, 3.0])), [a]),
        "concat/stack": (lambda: tsum(stack([concat([a, a * 2.0], 0), concat([a * a, a], 0)], 0)), [a]),
        "cross_entropy": (lambda: cross_entropy(a, labels), [a]),
    }


@pytest.mark.criterion(1, "gradient suite: ops and full 2-sample model match central differences (rel <= 1e-3)")
def test_c1_gradients(measured):
    start = time.perf_counter()
    rng = np.random.default_rng(0)
    worst_op = 0.0
    for name, (build, tensors) in _op_cases(rng).items():
        errs = check_gradients(build, tensors)
        assert max(errs.values()) <= 1e-3, name
        worst_op = max(worst_op, max(errs.values()))

    cfg = ModelConfig(dims=(16, 16, 16), embed_dim=32, depth=2, n_heads=2)
    model = DiaMond(cfg, seed=0)
    for name, p in model.named_parameters():
        if name.endswith("w_o"):
            p.assign(rng.normal(0, 0.2, p.data.shape))
    model.regbn = RegBNState(rng.normal(0, 0.3, (32, 32)), True)
    mri, pet = rng.random((2, 16, 16, 16)), rng.random((2, 16, 16, 16))
    labels = np.array([0, 1])
    errs = check_gradients(lambda: cross_entropy(model(mri, pet), labels), model.parameters(), samples=4, rng=rng)
    worst_model = max(errs.values())
    elapsed = time.perf_counter() - start
    measured(f"ops max rel {worst_op:.1e}, model max rel {worst_model:.1e}, {elapsed:.0f}s")
    assert worst_model <= 1e-3
    assert elapsed <= 120


# -- 2, 3 ---------------------------------------------------------------------------

@pytest.mark.criterion(2, "bi-attention: tau=0 oracle <= 1e-10, tau>1 exactly zero, sparsity monotone in tau")
def test_c2_bi_attention_equivalences(measured):
    rng = np.random.default_rng(1)
    p = random_attention_params(rng)
    xq, xkv = rng.normal(size=(6, 8)), rng.normal(size=(9, 8))
    err = np.max(np.abs(bi_attention(Tensor(xq), Tensor(xkv), p, BiAttentionConfig(0.0)).data - naive_attention(xq, xkv, p)))
    assert err <= 1e-10
    assert np.all(bi_attention(Tensor(xq), Tensor(xkv), p, BiAttentionConfig(1.01)).data == 0.0)
    z, _ = attention_weights(Tensor(xq), Tensor(xkv), p)
    sparsity = [mask_sparsity(z, tau) for tau in (0.0, 0.01, 0.1, 0.5, 1.01)]
    assert sparsity == sorted(sparsity)
    assert sparsity[0] == 0.0 and sparsity[-1] == 1.0
    measured(f"oracle err {err:.1e}, sparsity {[round(s, 3) for s in sparsity]}")


@pytest.mark.criterion(3, "asymmetry: bi_attention(x,y) and bi_attention(y,x) differ > 1e-6 on 20 seeds")
def test_c3_asymmetry(measured):
    gaps = []
    for seed in range(20):
        rng = np.random.default_rng(seed)
        p = random_attention_params(rng)
        x, y = Tensor(rng.normal(size=(5, 8))), Tensor(rng.normal(size=(5, 8)))
        cfg = BiAttentionConfig(0.01)
        gaps.append(float(np.max(np.abs(bi_attention(x, y, p, cfg).data - bi_attention(y, x, p, cfg).data))))
    measured(f"min gap {min(gaps):.2e}")
    assert min(gaps) > 1e-6


# -- 4 ------------------------------------------------------------------------------

@pytest.mark.criterion(4, "RegBN recovers A to 1e-3 and whitens the residual cross-covariance (f=16, B=32)")
def test_c4_regbn_recovery(measured):
    start = time.perf_counter()
    rng = np.random.default_rng(4)
    f, batch = 16, 32
    a = rng.normal(size=(f, f)) / np.sqrt(f)
    state = RegBNState.initial(f, ema_decay=0.0, update_lr=1e-2)
    for _ in range(10_000):
        z_p = rng.normal(size=(batch, f))
        state = regbn_fit_step(state, z_p @ a.T, z_p)
    z_p = rng.normal(size=(batch, f))
    resid = regbn_apply(state, Tensor(z_p @ a.T), Tensor(z_p)).data
    recovery = float(np.max(np.abs(state.omega - a)))
    cross = float(np.max(np.abs(z_p.T @ resid)) / batch)
    elapsed = time.perf_counter() - start
    measured(f"max|omega-A| {recovery:.1e}, cross-cov {cross:.1e}, {elapsed:.1f}s")
    assert recovery <= 1e-3
    assert cross <= 1e-2
    assert elapsed <= 60


# -- 5 ------------------------------------------------------------------------------

@pytest.mark.criterion(5, "full-size configuration has 30M parameters +/- 15%")
def test_c5_parameter_count(measured):
    cfg = full_size_config()
    n = DiaMond(cfg, seed=0).num_parameters()
    assert n == count_parameters(cfg)
    measured(f"{n:,} parameters")
    assert abs(n - 30e6) <= 0.15 * 30e6


# -- 6, 7, 8 ------------------------------------------------------------------------

@pytest.mark.criterion(6, "overfit smoke: 20 subjects, tiny config, training BACC >= 0.95 within 300 iterations")
@pytest.mark.slow
def test_c6_overfit(measured):
    start = time.perf_counter()
    data = synthesize(SynthConfig(n_subjects=20, seed=1))
    train_set = Dataset(data.mri, data.pet, data.labels)
    model = DiaMond(ModelConfig(embed_dim=64, depth=2, n_heads=4, patch_size=4), seed=0)
    result = train(model, train_set, None, TrainConfig(lr_max=1e-3, batch_size=16, total_iterations=300))
    bacc = evaluate(model, train_set).bacc
    elapsed = time.perf_counter() - start
    measured(f"train BACC {bacc:.3f} after {result.iterations_run} iterations, {elapsed:.0f}s")
    assert result.iterations_run <= 300
    assert bacc >= 0.95
    assert elapsed <= 300


SEPARABILITY_MODEL = ModelConfig(embed_dim=32, n_heads=2, patch_size=8)
SEPARABILITY_TRAIN = TrainConfig(lr_max=1e-3, total_iterations=1500, val_interval=50, early_stop_patience=10)


def _fit_and_test(model_cfg, parts, seed=0):
    model = DiaMond(model_cfg, seed=seed)
    train(model, parts["train"], parts["val"], SEPARABILITY_TRAIN.replace(seed=seed))
    return evaluate(model, parts["test"]).bacc


@pytest.mark.criterion(7, "shared-only signal: cross-modal branch test BACC >= 0.80, noise control in 0.5 +/- 0.1")
@pytest.mark.slow
def test_c7_shared_signal(measured):
    start = time.perf_counter()
    mp_only = SEPARABILITY_MODEL.replace(branches=BranchSet(False, False, True))
    shared = SynthConfig(n_subjects=200, unique_m_strength=0.0, unique_p_strength=0.0, seed=3)
    signal = _fit_and_test(mp_only, split_datasets(shared))
    control = _fit_and_test(mp_only, split_datasets(shared.__class__(**{**shared.__dict__, "shared_signal_strength": 0.0})))
    elapsed = time.perf_counter() - start
    measured(f"shared BACC {signal:.3f}, control BACC {control:.3f}, {elapsed:.0f}s")
    assert signal >= 0.80
    assert abs(control - 0.5) <= 0.1
    assert elapsed <= 15 * 60


@pytest.mark.criterion(8, "branch ablation: all-three mean test BACC over 3 seeds >= every single branch")
@pytest.mark.slow
def test_c8_branch_ordering(measured):
    start = time.perf_counter()
    synth = SynthConfig(
        n_subjects=400, shared_signal_strength=0.05, unique_m_strength=0.05, unique_p_strength=0.05,
        noise_sigma=0.1, seed=5,
    )
    parts = split_datasets(synth)
    rows = run_ablation(SEPARABILITY_MODEL, SEPARABILITY_TRAIN, parts["train"], parts["val"], parts["test"], "branches")
    means = {row.variant: row.summary("bacc")[0] for row in rows}
    elapsed = time.perf_counter() - start
    measured(", ".join(f"{k} {means[k]:.4f}" for k in ("M", "P", "MP", "M+P+MP")) + f", {elapsed:.0f}s")
    for single in ("M", "P", "MP"):
        assert means["M+P+MP"] >= means[single], single
    assert elapsed <= 45 * 60


# -- 9 ------------------------------------------------------------------------------

@pytest.mark.criterion(9, "metrics match brute force on 200 random cases; hand cases reproduced")
def test_c9_metrics_oracle(measured):
    rng = np.random.default_rng(9)
    for case in range(200):
        n_classes = int(rng.integers(2, 5))
        n = int(rng.integers(2, 60))
        labels = rng.integers(0, n_classes, n)
        raw = rng.random((n, n_classes))
        if case % 2:
            raw = np.round(raw, 1) + 0.01
        scores = raw / raw.sum(axis=1, keepdims=True)
        assert compute_metrics(labels, scores).as_dict() == brute_force(labels.tolist(), scores.tolist()), case

    labels = np.array([0] * 10 + [1] * 10)
    preds = np.array([0] * 9 + [1] + [1] * 8 + [0] * 2)
    bacc = compute_metrics(labels, np.eye(2)[preds]).bacc
    assert bacc == pytest.approx(0.85, abs=1e-15)
    y = np.array([False, False, True, True])
    assert roc_auc(y, np.array([0.1, 0.2, 0.8, 0.9])) == 1.0
    assert roc_auc(y, np.full(4, 0.5)) == 0.5
    measured("200/200 exact")


# -- 10 -----------------------------------------------------------------------------

@pytest.mark.criterion(10, "splitter: imbalance <= candidate median, deterministic, per-class ratios within 1")
def test_c10_splitter(measured, tmp_path):
    synth = SynthConfig(n_subjects=120, dims=(4, 4, 4), age_means=(64.0, 80.0), age_sd=5.0, seed=10)
    generate_synthetic(synth, tmp_path)
    records = read_manifest(tmp_path / "manifest.csv")
    first = propensity_split(records, n_candidates=SPLIT_CANDIDATES, seed=0)
    second = propensity_split(records, n_candidates=SPLIT_CANDIDATES, seed=0)
    median = float(np.median(first.candidate_imbalances))
    measured(f"selected {first.imbalance:.4f}, median {median:.4f}")
    assert len(first.candidate_imbalances) == SPLIT_CANDIDATES
    assert first.imbalance <= median
    assert first.assignment == second.assignment
    for c in (0, 1):
        ids = [r.id for r in records if r.diagnosis == c]
        for split, ratio in zip(("train", "val", "test"), (0.65, 0.15, 0.20)):
            count = sum(first.assignment[i] == split for i in ids)
            assert abs(count - ratio * len(ids)) <= 1.0


# -- 11 -----------------------------------------------------------------------------

@pytest.mark.criterion(11, "DMVOL1 and checkpoint round trips bit-exact; bad magic and truncation rejected")
def test_c11_formats(tmp_path):
    vol = np.random.default_rng(11).random((5, 6, 7)).astype(np.float32)
    save_volume(vol, tmp_path / "v.dmvol")
    assert load_volume(tmp_path / "v.dmvol").voxels.tobytes() == vol.tobytes()
    raw = encode_volume(vol)
    with pytest.raises(VolumeFormatError):
        decode_volume(b"XXXX" + raw[4:])
    with pytest.raises(VolumeTruncatedError):
        decode_volume(raw[:-4])

    model = DiaMond(ModelConfig(embed_dim=16, n_heads=2, depth=1, patch_size=8), seed=11)
    model.regbn = RegBNState(np.random.default_rng(0).normal(size=(16, 16)), True)
    path = tmp_path / "m.dmckpt"
    save_checkpoint(model, path)
    back = load_checkpoint(path)
    for key, value in model.state_dict().items():
        assert back.state_dict()[key].tobytes() == value.tobytes(), key
    x = np.random.default_rng(1).random((2, 16, 16, 16))
    assert model(x, x).data.tobytes() == back(x, x).data.tobytes()
    blob = path.read_bytes()
    path.write_bytes(b"XXXX" + blob[4:])
    with pytest.raises(CheckpointError):
        load_checkpoint(path)
    path.write_bytes(blob[:-1])
    with pytest.raises(CheckpointError):
        load_checkpoint(path)
