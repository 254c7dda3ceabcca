"""Layered Gaussian splatting for volume visualization.

Pipeline: procedural volumes are raymarched into per-layer RGBA datasets,
a layered Gaussian cloud is trained with frozen lower layers and inactive
pruning, compressed with a shared SH codebook, and rendered in real time with
layer activation and cut planes.
"""

from .backend import BACKEND, NUMBA_ENABLED
from .cameras import Camera, generate_cameras, look_at_quat
from .dataset import Dataset, load_dataset, render_dataset, save_dataset
from .formats import (CompressedCloud, dequantize, export_viewer, kmeans_sh,
                      load_ply, parse_viewer, quantize, read_ply, save_ply,
                      write_ply)
from .metrics import MetricReport, psnr, ssim
from .render import StereoRequest, ViewRequest, render_stereo, render_view, \
    sort_indices
from .scenes import SCENE_IDS, build_scene
from .splats import (CutPlane, Gaussian, GaussianCloud, RenderOutput,
                     compute_cov3d, project_gaussian, rasterize,
                     rasterize_backward, sh_eval)
from .training import (ActivityTracker, OptimizerState, TrainConfig,
                       adam_step, composite_over, densify_and_prune,
                       inactive_prune, loss, train_layer, train_layered,
                       update_activity)
from .volume import (TransferFunction, VoxelVolume, apply_transfer,
                     init_point_cloud, raymarch, sample_trilinear)

__version__ = "0.1.0"
