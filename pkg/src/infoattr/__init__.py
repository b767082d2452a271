"""infoattr: information-theoretic attribution maps for black-box classifiers.

Replace each K x K image patch with draws from a conditional sampler, average
the classifier posterior over the draws (Monte-Carlo marginalization), and
score the shift in bits: a class-specific PMI map (evidence for/against one
class) and a class-independent IG map (how informative each pixel is).
Occlusion and weight-of-evidence baselines, deletion-curve evaluation and
randomization sanity checks ride on the same machinery.
"""

__version__ = "0.1.0"

from .classifiers import (
    Classifier,
    LinearSoftmaxModel,
    QuadrantClassifier,
    load_linear_model,
    randomize_parameters,
    save_linear_model,
    train_logistic,
)
from .engine import (
    EngineConfig,
    ExplanationResult,
    PatchRecord,
    derive_patch_seed,
    exact_marginal_prediction,
    explain,
    ig,
    marginal_prediction,
    occlusion_map,
    pda_map,
    pmi,
    resolve_classes,
)
from .errors import (
    CorrelationUndefinedError,
    DegenerateDataError,
    EngineError,
    FormatError,
    GeometryError,
    InfoAttrError,
    ProtocolError,
    UnsupportedOracleError,
)
from .evaluation import (
    PerturbationCurve,
    SanityReport,
    auc,
    pearson,
    perturbation_curve,
    sanity_label_randomization,
    sanity_param_randomization,
    spearman,
)
from .protocol import (
    ExternalClassifier,
    ExternalSampler,
    connect_external,
    connect_external_sampler,
)
from .render import (
    Colormap,
    load_image,
    load_map,
    overlay,
    render_heatmap,
    save_image,
    save_map,
)
from .samplers import (
    ConditionalGaussianModel,
    DescriptorConfig,
    EmpiricalPatchModel,
    ReferenceSampler,
    Sampler,
    build_empirical_sampler,
    fit_conditional_gaussian,
    load_sampler,
    save_sampler,
)
from .types import (
    AttributionMap,
    ContextWindow,
    Image,
    PatchGrid,
    Prediction,
    accumulate_patch_values,
    apply_patch,
    build_patch_grid,
    extract_context,
)

__all__ = [name for name in dir() if not name.startswith("_")]
