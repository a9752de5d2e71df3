"""RenderNet assembly, patch training and the encoder-decoder baselines."""

from .spec import ConvLayer, NetworkSpec, SpecError
from .model import (RenderInputs, build, project, squeeze, forward_camera, forward, render_tensor,
                    shade_head, light_tensors)
from .train import (LOSS_KINDS, Schedule, TrainLog, TrainingDiverged, clip_gradients,
                    compute_loss, corrupt, crop_patch, predict, train)
from .baseline import (BaselineSpec, baseline_forward, baseline_predict, build_baseline,
                       condition_vector, train_baseline)
