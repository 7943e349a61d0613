"""Multi-group proportional representation (MPR) auditing.

Measure how far a set of generated samples is from a reference population
over a class of group-membership functions, attach bootstrap uncertainty and
generalization bounds, and fine-tune a small categorical generator toward the
reference.
"""
__version__ = "0.1.0"

from .attributes import (
    Attribute,
    AttributeSchema,
    JointDistribution,
    ReferenceSpec,
    SampleSet,
    decode_vector,
    encode_record,
    load_proportions,
    load_samples,
    load_schema,
    reference_from_proportions,
)
from .errors import GuardError, InputError, MprError
from .function_classes import (
    BoundedLinear,
    DecisionTree,
    ExplicitSet,
    Indicator,
    IndicatorWitness,
    LinearWitness,
    TreeWitness,
    evaluate,
    evaluate_rows,
    range_constant,
)
from .mpr_core import (
    MprEstimate,
    brute_force_linear,
    brute_force_tree,
    mean_diff_vector,
    mpr,
    mpr_exact,
    mpr_explicit,
    mpr_linear,
    mpr_tree,
    tv_distance,
)
from .optimizer import GeneratorModel, TuneConfig, finetune, grad_loss, objective
from .stats import (
    BoundInputs,
    bernstein_bound,
    bootstrap_mpr,
    derive_seed,
    empirical_rademacher,
    gap_bound_prop1,
    gap_experiment,
    model_compare_test,
    prompt_bound_prop2,
    std_heatmap,
    threshold_test,
)
