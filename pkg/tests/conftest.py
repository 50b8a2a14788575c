import numpy as np
import pytest
from hypothesis import HealthCheck, settings

settings.register_profile(
    "suite",
    max_examples=25,
    deadline=None,
    derandomize=True,
    suppress_health_check=[HealthCheck.too_slow],
)
settings.load_profile("suite")


@pytest.fixture(scope="session")
def micro_cfg():
    """Small but structurally complete run config for harness tests."""
    import omnid.harness as H
    cfg = H.desk_profile()
    cfg.model.grid_counts = (4, 2, 4)
    cfg.model.embed_dim = 8
    cfg.model.feat_dim = 8
    cfg.model.samples_per_view = 2
    cfg.model.encoder_widths = (8, 8)
    cfg.model.encoder_strides = (4, 1)
    cfg.model.encoder_kernels = (4, 3)
    cfg.model.image_size = 32
    cfg.model.denoiser_width = 24
    cfg.model.denoiser_blocks = 2
    cfg.model.diffusion_steps = 25
    cfg.train.batch_size = 8
    cfg.train.steps = 30
    cfg.train.warmup_steps = 5
    cfg.train.checkpoint_every = 0
    cfg.eval.episodes = 4
    cfg.eval.max_steps = 40
    return cfg


@pytest.fixture(scope="session")
def micro_packs(tmp_path_factory, micro_cfg):
    """Tiny expert packs (BCDE train + camera-A fine-tune) shared by tests."""
    from omnid import synthworld as sw
    from omnid.episodes import write_pack
    from omnid.harness.models import resolve_rig

    root = tmp_path_factory.mktemp("packs")
    rig = resolve_rig(micro_cfg)
    pack, _ = sw.generate_pack(sw.ScenarioSpec("id", 0, "BCDE", 6, seed=5), rig)
    train_path = root / "train.omne"
    write_pack(train_path, pack)
    pack_a, _ = sw.generate_pack(sw.ScenarioSpec("id", 0, "A", 3, seed=6), rig)
    cam_a_path = root / "cam_a.omne"
    write_pack(cam_a_path, pack_a)
    return {"train": str(train_path), "cam_a": str(cam_a_path), "rig": rig}


@pytest.fixture()
def f64():
    """Run the test body under float64 defaults."""
    from omnid.tensorgrad.tensor import dtype_scope
    with dtype_scope(np.float64):
        yield
