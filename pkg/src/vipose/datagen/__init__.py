"""Synthetic visual-inertial data: trajectories, IMU, rendering, pairs and datasets."""
from .augment import AugmentConfig, augment, hsv_shift
from .batches import batch_iterator, batch_plan
from .dataset import (Dataset, DatasetConfig, DatasetError, Sequence, dataset_checksum, make_model,
                      plan_sequences, read_dataset, synthesize_dataset)
from .pairs import PairConfig, TrainingPair, crop_pair, make_real_pair, make_synthetic_pair, reconstruct
from .sequence import FrameRecord, OcclusionEpisode, Scene, auto_label, occluder_body, render_frame, render_sequence
from .trajectory import ImuNoise, Trajectory, TrajectorySpec, evaluate, generate_trajectory, imu_arrays, synthesize_imu
