"""andnet: train feed-forward networks toward AND-like neurons and
measure what that buys under white-box adversarial attack.

The toolkit combines four ingredients: an L1 budget on each neuron's
weights, sigmoid input filters on every layer, per-neuron statistics
contrasting real with scrambled (per-variable resampled) data, and a
secondary loss that rewards neurons for responding to joint patterns
rather than to individual inputs.  FGSM and PGD sweeps quantify the
robustness effect.
"""

from .attacks import (
    DEFAULT_EPSILONS,
    AttackConfig,
    RobustnessReport,
    attack_sweep,
    fgsm,
    input_gradient,
    pgd,
)
from .dataset import (
    LabeledSet,
    batches,
    load_idx_images,
    load_idx_labels,
    load_labeled,
    load_mnist,
    save_idx_images,
    save_idx_labels,
)
from .measures import (
    CorrelationSpec,
    NeuronMeasures,
    UnnormalizedLayerError,
    batch_measures,
    generalized_correlation,
    hysp,
    ks_statistic,
    loss2,
    loss2_backward,
    ncf,
    ncf_histograms,
    pearson,
    sat,
    sds_correlation,
    unit_importance,
)
from .network import (
    DEFAULT_LAYER_SIZES,
    ActivationTrace,
    Gradients,
    LayerParams,
    NetworkParams,
    activation,
    backward,
    classification_loss,
    forward,
    init_params,
    input_filter,
    load_checkpoint,
    normalize_network,
    normalize_weights,
    predict,
    save_checkpoint,
)
from .numerics import RngStream, ShapeMismatchError
from .scramble import ScrambledTrace, scramble_columns, sds_type_a, sds_type_b
from .training import (
    DEFENDED_LEARNING_RATE,
    DivergenceError,
    EpochMetrics,
    TrainConfig,
    concentrate_gradient,
    mix_gradients,
    train,
    update_weights,
)

__version__ = "0.1.0"
