"""Radio-map construction: first predict from environment rasters, then
correct with sparse on-site measurements.

The package is organized in thin layers: :mod:`fptc.scene` (grids, scenes,
splits), :mod:`fptc.features` (input channels: path loss, line of sight,
measurement interpolation), :mod:`fptc.synth` (synthetic scenes with a
deterministic propagation oracle), :mod:`fptc.networks` (the two
conditional GANs), :mod:`fptc.training` (two-stage training/inference),
:mod:`fptc.evaluation` (metrics, ablations, density sweeps) and
:mod:`fptc.cli`.
"""

from .errors import (CapacityError, ConfigurationError,
                     DegenerateGeometryError, DomainError, FptcError,
                     GenerationError, IngestionError, NumericalError,
                     RangeError, ValidationError)
from .scene import (DatasetSplits, GridSpec, MeasurementSet,
                    NormalizationRange, RadioMap, Scene, TransmitterConfig,
                    apportion, crop_interest_area, list_scene_ids, load_scene,
                    normalize_rsrp, save_scene, split_dataset)
from .features import (CORRECT_CHANNEL_ORDER, MEASUREMENT_FLOOR,
                       PREDICT_CHANNEL_ORDER, FeatureKind, FeatureMap,
                       InputStack, RbfConfig, assemble_input_stack,
                       blocked_cell_counts, coarse_prediction_map,
                       cost231_pathloss, empirical_radio_map,
                       empirical_rsrp_dbm, los_boundary_height,
                       los_indicator_map, measurement_map,
                       obstacle_topview_map, rbf_interpolate,
                       rbf_interpolate_dbm, resolve_shape_epsilon,
                       sample_measurements, supercover_cells,
                       transmitter_position_map)
from .synth import (OracleParams, SynthParams, fspl_db, generate_scene,
                    oracle_radio_map, synthesize_scene)
from .networks import (Discriminator, DiscriminatorSpec, Generator,
                       GeneratorSpec, LossWeights, ResidualBlock,
                       SelfAttention2d, adversarial_loss, count_parameters,
                       default_discriminator_spec, default_generator_spec,
                       generator_adversarial_loss, reconstruction_loss)
from .training import (Checkpoint, TrainConfig, correct_radio_map,
                       derive_seed, load_checkpoint, predict_radio_map,
                       save_checkpoint, train_stage, write_training_log)
from .evaluation import (AblationRow, DensityPoint, EvalReport,
                         MetricsRecord, PipelineSplits, ablation_suite,
                         compute_metrics, density_sweep, evaluate_split,
                         export_radio_map, load_pipeline_splits, mae_dbm,
                         measurement_count_for, psnr_db, rmse_dbm, ssim,
                         to_pixel_scale)

__version__ = "0.1.0"

__all__ = [name for name in dir() if not name.startswith("_")]
