"""earfit: 3D ear reconstruction from single images by analysis-by-synthesis."""

from .models import (ColourModel, MorphableModel, WhiteningTransform, build_pca,
                     reconstruct_colour, reconstruct_shape, unwhiten)
from .projection import Pose, ProjectedShape, project_sop, rotation_from_euler, select_landmarks
from .raster import RasterConfig, RasterOutput, rasterize, rasterize_backward
from .fitting import (CodeVector, FitReport, LossWeights, PRESETS, fit_landmarks,
                      fit_photometric, landmark_energy, landmark_loss, pixel_loss,
                      reg_scale, reg_statistical, total_loss)
from .colours import VertexColourSample, build_colour_model, sample_vertex_colours
from .dataset import (AnnotatedImage, augment, ear_direction, generate_synthetic_model,
                      render_synthetic_corpus)
from .evaluation import EvalReport, emit_report, evaluate
from .earm import load_model, save_model

__version__ = "0.1.0"
