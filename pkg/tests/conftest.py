import dataclasses

import numpy as np
import pytest

from fptc import (DiscriminatorSpec, GeneratorSpec, GridSpec,
                  NormalizationRange, OracleParams, RadioMap, Scene,
                  SynthParams, TrainConfig, TransmitterConfig, synthesize_scene,
                  train_stage)

# small enough to train in under a second; shared by the training and
# evaluation test modules
TINY_NORM = NormalizationRange(-80.0, 0.0)
TINY_GEN_PREDICT = GeneratorSpec(in_channels=4, levels=3, base_channels=8,
                                 max_channels=16, sa_resolutions=(4,))
TINY_GEN_CORRECT = GeneratorSpec(in_channels=3, levels=3, base_channels=8,
                                 max_channels=16, rc_block_count=1)
TINY_DISC_PREDICT = DiscriminatorSpec(in_channels=5, levels=3, base_channels=8,
                                      max_channels=16)
TINY_DISC_CORRECT = DiscriminatorSpec(in_channels=4, levels=3, base_channels=8,
                                      max_channels=16)


def make_scene(width=16, height=16, cell=1.0, tx=(8, 8), heights=None,
               h_b=30.0, power=30.0, freq=2000.0, rx=1.5, gt=None,
               scene_id="scene"):
    grid = GridSpec(width_px=width, height_px=height, cell_size_m=cell)
    if heights is None:
        heights = np.zeros(grid.shape)
    tx_cfg = TransmitterConfig(x_px=tx[0], y_px=tx[1], h_b_m=h_b,
                               power_dbm=power, freq_mhz=freq)
    if gt is not None and not isinstance(gt, RadioMap):
        gt = RadioMap(grid=grid, values_dbm=gt)
    return Scene(grid=grid, heights=heights, tx=tx_cfg, rx_height_m=rx,
                 ground_truth=gt, scene_id=scene_id)


@pytest.fixture
def flat_scene():
    return make_scene()


@pytest.fixture
def norm():
    return NormalizationRange()


@pytest.fixture(scope="session")
def tiny_synthetic_scenes():
    """Eight 16x16 scenes with oracle ground truth, enough for smoke training."""
    grid = GridSpec(16, 16, 2.0)
    sp = SynthParams(n_buildings=(1, 3), footprint_px=(2, 5), tx_margin_px=2)
    scenes = []
    for i in range(8):
        scenes.append(synthesize_scene(
            grid,
            dataclasses.replace(sp, seed=100 + i),
            OracleParams(seed=200 + i),
            scene_id=f"tiny_{i:02d}"))
    return scenes


@pytest.fixture(scope="session")
def tiny_predict_ckpt(tiny_synthetic_scenes):
    cfg = TrainConfig(stage="predict", epochs=3, batch_size=4, seed=0)
    return train_stage(tiny_synthetic_scenes[:4], tiny_synthetic_scenes[4:6],
                       cfg, norm_range=TINY_NORM, gen_spec=TINY_GEN_PREDICT,
                       disc_spec=TINY_DISC_PREDICT)


@pytest.fixture(scope="session")
def tiny_correct_ckpt(tiny_synthetic_scenes, tiny_predict_ckpt):
    cfg = TrainConfig(stage="correct", epochs=3, batch_size=4, seed=0,
                      measurement_count=15)
    return train_stage(tiny_synthetic_scenes[:4], tiny_synthetic_scenes[4:6],
                       cfg, norm_range=TINY_NORM, gen_spec=TINY_GEN_CORRECT,
                       disc_spec=TINY_DISC_CORRECT, priors=tiny_predict_ckpt)
