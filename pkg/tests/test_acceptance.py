"""Release gate: ten numbered checks, one pass/fail line each.

Each test prints ``criterion NN: PASS/FAIL (measured values)`` and fails
with the same message, so the run log carries exactly one line per
criterion. Cheap property checks come first; the toy end-to-end runs
(criteria 8 and 9) share session-scoped fixtures. Training-time checks
use wall-clock guards sized for a single laptop-class CPU core.
"""

import math
import time

import numpy as np
import pytest
import torch

from textdeform.evaluation import ablate, iteration_iou_report
from textdeform.fields import (
    AnnotatedSample,
    TextInstance,
    ambiguous_nearest,
    compute_ground_truth,
    oracle_distance_direction,
)
from textdeform.geometry import resample_uniform
from textdeform.losses import (
    LossConfig,
    deformation_weight,
    matching_loss,
    ohem_select,
    total_loss,
)
from textdeform.network import ModelConfig, build_model, build_propagation_matrix
from textdeform.proposals import (
    FieldMaps,
    ProposalConfig,
    extract_candidates,
    filter_by_confidence,
    mask_to_contour,
)
from textdeform.synthdata import SynthConfig, generate
from textdeform.trainer import TrainConfig, _images_tensor, train


def _line(num: int, ok: bool, detail: str) -> None:
    print(f"criterion {num:02d}: {'PASS' if ok else 'FAIL'} ({detail})")
    assert ok, f"criterion {num:02d} failed: {detail}"


# ---------------------------------------------------------------------------
# shared corpora and training runs


@pytest.fixture(scope="session")
def toy_corpus():
    scfg = SynthConfig()
    return generate(scfg, 500, seed=101), generate(scfg, 100, seed=202)


@pytest.fixture(scope="session")
def toy_run(toy_corpus, tmp_path_factory):
    tr, va = toy_corpus
    cfg = TrainConfig(
        epochs=60,
        batch_size=8,
        eval_every=2,
        early_stop_f=0.85,
        seed=0,
        out_dir=tmp_path_factory.mktemp("toy_run"),
    )
    t0 = time.perf_counter()
    result = train(tr, va, cfg)
    return result, time.perf_counter() - t0, cfg


@pytest.fixture(scope="session")
def ablation_rows(toy_corpus, tmp_path_factory):
    tr, va = toy_corpus
    base = TrainConfig(epochs=12, batch_size=8, eval_every=12, seed=0)
    return ablate(tr[:240], va[:80], base, tmp_path_factory.mktemp("ablation"))


# ---------------------------------------------------------------------------
# 1. field-oracle equivalence


def test_criterion_01_field_oracle_equivalence():
    """GT distance/direction vs dense boundary sampling at step 1e-3 px.

    Distance is compared at every owned pixel. Direction is compared
    where it is well defined and resolvable: at least 1 px from the
    boundary (the sampled oracle's angular resolution is step/2 over
    distance) and away from medial-axis ties, where the nearest boundary
    point flips between equally close feet.
    """
    t0 = time.perf_counter()
    scfg = SynthConfig(
        image_size=64, min_instances=1, max_instances=1,
        thickness_range=(10, 18), length_range=(30, 48),
    )
    n_polys = checked_dir = interior_total = 0
    worst_dist = worst_dir = 0.0
    worst_norm = worst_max = 0.0
    seed = 0
    while n_polys < 50:
        seed += 1
        sample = generate(scfg, 1, seed=1000 + seed)[0]
        if not sample.instances:
            continue
        n_polys += 1
        bundle = compute_ground_truth(sample)
        poly = sample.instances[0].boundary
        ys, xs = np.nonzero(bundle.instance_id == 0)
        pts = np.column_stack([xs, ys]).astype(float)
        raw, dir_o = oracle_distance_direction(poly, pts, step=1e-3)

        worst_dist = max(worst_dist, float(np.abs(bundle.dist[ys, xs] - raw / raw.max()).max()))
        norms = np.linalg.norm(bundle.dir[ys, xs], axis=1)
        worst_norm = max(worst_norm, float(np.abs(norms - 1.0).max()))
        worst_max = max(worst_max, abs(float(bundle.dist[ys, xs].max()) - 1.0))

        sel = (raw >= 1.0) & ~ambiguous_nearest(pts, poly)
        interior_total += len(pts)
        checked_dir += int(sel.sum())
        if sel.any():
            diff = np.abs(bundle.dir[ys, xs][sel] - dir_o[sel]).max()
            worst_dir = max(worst_dir, float(diff))

        outside = bundle.instance_id < 0
        assert bundle.dist[outside].max() == 0.0
        assert np.abs(bundle.dir[outside]).max() == 0.0

    elapsed = time.perf_counter() - t0
    frac = checked_dir / interior_total
    ok = (
        worst_dist <= 1e-3
        and worst_dir <= 1e-3
        and worst_norm <= 1e-6
        and worst_max <= 1e-6
        and frac >= 0.5
        and elapsed < 60.0
    )
    _line(
        1, ok,
        f"dist err {worst_dist:.2e}, dir err {worst_dir:.2e}, norm err {worst_norm:.2e}, "
        f"max-dist err {worst_max:.2e}, dir coverage {frac:.0%}, {elapsed:.1f}s",
    )


# ---------------------------------------------------------------------------
# 2. propagation matrix


def test_criterion_02_propagation_matrix():
    g20 = build_propagation_matrix(20)
    ring = np.eye(20)
    idx = np.arange(20)
    for off in (1, 2, 18, 19):
        ring[idx, (idx + off) % 20] = 1.0
    ok20 = np.array_equal(g20, ring / 5.0)
    ok5 = np.array_equal(build_propagation_matrix(5), np.ones((5, 5)) / 5.0)
    _line(2, ok20 and ok5, f"N=20 entrywise {'exact' if ok20 else 'off'}, N=5 {'exact' if ok5 else 'off'}")


# ---------------------------------------------------------------------------
# 3. matching-loss oracle


def _smooth_l1_np(d: np.ndarray) -> np.ndarray:
    a = np.abs(d)
    return np.where(a < 1.0, 0.5 * a * a, a - 0.5)


def test_criterion_03_matching_loss_oracle():
    rng = np.random.default_rng(33)
    worst = 0.0
    for _ in range(200):
        pred = rng.uniform(0, 64, (20, 2))
        gt = rng.uniform(0, 64, (20, 2))
        ours = float(matching_loss(torch.as_tensor(pred), torch.as_tensor(gt)))
        brute = min(
            float(_smooth_l1_np(pred - np.roll(gt, s, axis=0)).sum()) for s in range(20)
        )
        worst = max(worst, abs(ours - brute))
    shift_vals = []
    ring = rng.uniform(0, 64, (20, 2))
    for k in range(20):
        shifted = np.roll(ring, k, axis=0)
        shift_vals.append(float(matching_loss(torch.as_tensor(ring), torch.as_tensor(shifted))))
    zeros = all(v == 0.0 for v in shift_vals)
    _line(3, worst < 1e-9 and zeros, f"max |diff| {worst:.2e} over 200 pairs, shifts score {max(shift_vals):.1e}")


# ---------------------------------------------------------------------------
# 4. gradient integrity


def _gradcheck_scene():
    """32x32 single-instance scene where OHEM keeps every pixel.

    The instance covers more than a quarter of the image, so 3x the
    positives exceeds the negative count and the mined mask is the whole
    map; that removes the only non-differentiable selection from the
    composite loss and makes central differences exact.
    """
    blob = np.array(
        [
            [8.3, 6.3], [24.3, 6.3], [28.3, 11.3], [28.3, 21.3],
            [24.3, 25.3], [8.3, 25.3], [4.3, 20.3], [4.3, 11.3],
        ]
    )
    rng = np.random.default_rng(44)
    image = rng.uniform(0.2, 0.8, size=(32, 32, 3))
    sample = AnnotatedSample(image=image, instances=[TextInstance(boundary=blob)])
    bundle = compute_ground_truth(sample)
    assert int((bundle.instance_id == 0).sum()) * 3 >= int((bundle.instance_id < 0).sum())
    gt = {
        "cls": torch.as_tensor(bundle.cls, dtype=torch.float64).unsqueeze(0),
        "dist": torch.as_tensor(bundle.dist, dtype=torch.float64).unsqueeze(0),
        "dir": torch.as_tensor(bundle.dir.transpose(2, 0, 1), dtype=torch.float64).unsqueeze(0),
        "segment_size": torch.as_tensor(bundle.segment_size, dtype=torch.float64).unsqueeze(0),
    }
    mask = (bundle.instance_id == 0) & (bundle.dist > 0.3)
    ring = torch.as_tensor(mask_to_contour(mask, 8).points, dtype=torch.float64)
    target = torch.as_tensor(
        resample_uniform(sample.instances[0].boundary, 8).points, dtype=torch.float64
    )
    img = torch.as_tensor(image.transpose(2, 0, 1), dtype=torch.float64).unsqueeze(0)
    return img, gt, ring, target


def test_criterion_04_gradient_integrity():
    t0 = time.perf_counter()
    mcfg = ModelConfig(
        base_channels=4, feature_channels=8, hidden=8,
        n_control=8, n_iters=3, encoder="adaptive", decoder_hidden=(16, 8),
    )
    model = build_model(mcfg, seed=0).double()
    gen = torch.Generator().manual_seed(5)
    with torch.no_grad():
        # the offset head ships zero-initialized, which would zero every
        # gradient upstream of it; give it generic small weights instead
        for p in model.deform.decoder.fc3.parameters():
            p.copy_(torch.randn(p.shape, generator=gen, dtype=torch.float64) * 0.05)

    img, gt, ring, target = _gradcheck_scene()
    lcfg = LossConfig()

    def composite() -> torch.Tensor:
        out = model(img)
        stack = model.deform_stack(out["features"], out["priors"])[0]
        iterates = model.deform.iterate(stack, ring.unsqueeze(0), mcfg.n_iters)
        boundary = [[(it[0], target)] for it in iterates]
        return total_loss(out["logits"], gt, boundary, lcfg, epoch=4, max_epochs=12)["total"]

    model.zero_grad()
    composite().backward()
    grads = {name: p.grad.detach().clone() for name, p in model.named_parameters()}

    h = 1e-5
    worst_rel, worst_name = 0.0, ""
    for name, p in model.named_parameters():
        v = torch.randn(p.shape, generator=gen, dtype=torch.float64)
        v /= v.norm()
        with torch.no_grad():
            p.add_(h * v)
            f_plus = float(composite())
            p.sub_(2.0 * h * v)
            f_minus = float(composite())
            p.add_(h * v)
        fd = (f_plus - f_minus) / (2.0 * h)
        ana = float((grads[name] * v).sum())
        rel = abs(ana - fd) / max(abs(ana), abs(fd), 1e-3)
        if rel > worst_rel:
            worst_rel, worst_name = rel, name
    elapsed = time.perf_counter() - t0
    ok = worst_rel < 1e-4 and elapsed < 300.0
    _line(4, ok, f"worst rel err {worst_rel:.2e} at {worst_name or 'n/a'}, {elapsed:.1f}s")


# ---------------------------------------------------------------------------
# 5. schedule arithmetic


def test_criterion_05_schedule_arithmetic():
    final = deformation_weight(60, 60, lam=0.1)
    exact = final == 0.05
    vals = [deformation_weight(i, 60, lam=0.1) for i in range(1, 121)]
    decreasing = all(a > b for a, b in zip(vals, vals[1:]))
    _line(5, exact and decreasing, f"weight at i=eps {final!r}, strictly decreasing {decreasing}")


# ---------------------------------------------------------------------------
# 6. proposal separation


def test_criterion_06_proposal_separation():
    rng = np.random.default_rng(66)
    pcfg = ProposalConfig()
    hits = 0
    for _ in range(100):
        w1, h1, w2, h2 = rng.uniform(10, 20, size=4)
        if rng.random() < 0.5:
            x0 = rng.uniform(2.0, 62.0 - (w1 + 3.0 + w2))
            y0a = rng.uniform(2.0, 62.0 - h1)
            lo = max(2.0, y0a - h2 + 5.0)
            hi = min(62.0 - h2, y0a + h1 - 5.0)
            y0b = rng.uniform(lo, hi)
            rect_a = (x0, y0a, w1, h1)
            rect_b = (x0 + w1 + 3.0, y0b, w2, h2)
        else:
            y0 = rng.uniform(2.0, 62.0 - (h1 + 3.0 + h2))
            x0a = rng.uniform(2.0, 62.0 - w1)
            lo = max(2.0, x0a - w2 + 5.0)
            hi = min(62.0 - w2, x0a + w1 - 5.0)
            x0b = rng.uniform(lo, hi)
            rect_a = (x0a, y0, w1, h1)
            rect_b = (x0b, y0 + h1 + 3.0, w2, h2)
        instances = []
        for k, (x, y, w, h) in enumerate((rect_a, rect_b)):
            corners = np.array([[x, y], [x + w, y], [x + w, y + h], [x, y + h]])
            instances.append(TextInstance(boundary=corners, id=k))
        sample = AnnotatedSample(image=np.full((64, 64, 3), 0.5), instances=instances)
        bundle = compute_ground_truth(sample)
        fields = FieldMaps(cls=bundle.cls, dist=bundle.dist, dir=bundle.dir)
        props = filter_by_confidence(extract_candidates(fields, pcfg), pcfg)
        hits += int(len(props) == 2)
    _line(6, hits == 100, f"{hits}/100 placements gave exactly 2 proposals")


# ---------------------------------------------------------------------------
# 7. hard-negative mining contract


def test_criterion_07_ohem_contract():
    rng = np.random.default_rng(77)
    exact = True
    for _ in range(100):
        n = int(rng.integers(50, 400))
        n_pos = int(rng.integers(1, n))
        pos = np.zeros(n, dtype=bool)
        pos[rng.choice(n, size=n_pos, replace=False)] = True
        pos_t = torch.as_tensor(pos)
        keep = ohem_select(torch.as_tensor(rng.random(n)), pos_t, ratio=3, min_neg=100)
        got_neg = int((keep & ~pos_t).sum())
        if got_neg != min(3 * n_pos, n - n_pos) or not bool(keep[pos_t].all()):
            exact = False
            break
    _line(7, exact, "selected negatives == min(3*pos, available) on 100 random masks")


# ---------------------------------------------------------------------------
# 8. end-to-end toy training


def test_criterion_08_end_to_end_toy_training(toy_corpus, toy_run):
    result, seconds, cfg = toy_run
    _, va = toy_corpus
    model = result.model
    detections = []
    with torch.no_grad():
        for i in range(0, len(va), cfg.batch_size):
            detections.extend(model.detect(_images_tensor(va[i : i + cfg.batch_size]), cfg.proposal))
    gt = [[inst.boundary.points for inst in s.instances] for s in va]
    report = iteration_iou_report(detections, gt, cfg.eval_cfg)
    f = result.final_eval.f_measure
    iou1, iou3 = report.get(1, 0.0), report.get(3, 0.0)
    epochs_used = len(result.history)
    ok = f >= 0.85 and iou3 >= iou1 and epochs_used <= 60 and seconds < 45 * 60
    _line(
        8, ok,
        f"val F {f:.3f} after {epochs_used} epochs in {seconds / 60:.1f} min, "
        f"mean IoU iter1 {iou1:.3f} -> iter3 {iou3:.3f}",
    )


# ---------------------------------------------------------------------------
# 9. ablation direction checks


def test_criterion_09_ablation_directions(ablation_rows):
    f = {row["cell"]: row["f_measure"] for row in ablation_rows}
    singles = {k: f[k] for k in ("fc", "rnn", "circular_conv", "gcn")}
    best_single = max(singles.values())
    prior_gap = f["full"] - f["prior_masked"]
    adaptive_ok = f["full"] >= best_single - 0.01
    ok = prior_gap >= 0.03 and adaptive_ok
    _line(
        9, ok,
        f"full F {f['full']:.3f}, masked-prior F {f['prior_masked']:.3f} (gap {prior_gap:.3f}), "
        f"best single {max(singles, key=singles.get)} {best_single:.3f}",
    )


# ---------------------------------------------------------------------------
# 10. determinism and resume


def _loss_keys(row: dict) -> dict:
    return {k: v for k, v in row.items() if k.startswith("loss_")}


def test_criterion_10_determinism_and_resume(tmp_path_factory):
    scfg = SynthConfig(image_size=96)
    tr = generate(scfg, 12, seed=777)
    va = generate(scfg, 4, seed=778)
    mcfg = ModelConfig(base_channels=8, feature_channels=16, hidden=32, n_control=12)
    pcfg = ProposalConfig(n_control=12)

    def make_cfg(epochs, out_dir=None, stop=None):
        return TrainConfig(
            epochs=epochs, batch_size=4, warmup_frac=1.0, eval_every=50,
            seed=4, out_dir=out_dir, stop_after_epoch=stop, model=mcfg, proposal=pcfg,
        )

    a = train(tr, va, make_cfg(1)).history[0]
    b = train(tr, va, make_cfg(1)).history[0]
    rerun_diff = max(abs(a[k] - b[k]) for k in _loss_keys(a))

    straight = train(tr, va, make_cfg(3, out_dir=tmp_path_factory.mktemp("straight")))
    part_dir = tmp_path_factory.mktemp("staged")
    staged = train(tr, va, make_cfg(3, out_dir=part_dir, stop=1))
    assert len(staged.history) == 2
    resumed = train(
        tr, va, make_cfg(3, out_dir=tmp_path_factory.mktemp("resumed")),
        resume_path=part_dir / "checkpoint.bin",
    )
    assert [r["epoch"] for r in resumed.history] == [2]
    last_straight = straight.history[2]
    resume_diff = max(
        abs(last_straight[k] - resumed.history[0][k]) for k in _loss_keys(last_straight)
    )
    ok = rerun_diff <= 1e-9 and resume_diff <= 1e-6
    _line(10, ok, f"rerun max loss diff {rerun_diff:.1e}, resume max loss diff {resume_diff:.1e}")
