"""Coupon wallets as a finite-horizon decision problem.

Values coupon portfolios under trip-by-trip redemption, fits limited-attention
redemption models to trip logs, and simulates promotional effect under coupon
unawareness. See README.md for the command-line surface.
"""

__version__ = "0.1.0"

from .coupon_core import (  # noqa: F401
    CouponGroup,
    CouponSet,
    DEFAULT_GROUP,
    EMPTY_SET,
    enumerate_awareness_subsets,
    enumerate_reachable,
    make_coupon_set,
    redemption_value,
    step_group,
    step_set,
)
from .errors import (  # noqa: F401
    CapacityError,
    CouponError,
    DomainError,
    IntegrityError,
    NumericError,
    ValidationError,
)
from .value_engine import (  # noqa: F401
    DiscreteDistribution,
    McConfig,
    SelectionRateModel,
    TravelerProfile,
    ValueTable,
    default_chain,
    delta_value,
    value_bounds,
    value_bounds_exact,
    value_hat,
    value_hat_many,
    value_optimal_oracle,
)
from .attention import (  # noqa: F401
    AttentionParams,
    AttentionState,
    awareness_set_prob,
    full_attention,
    update_attention,
)
from .choice import (  # noqa: F401
    ChoiceModelSpec,
    argmax_choice,
    general_coupon_prob,
    mixture_prob,
    single_coupon_prob,
)
from .estimation import (  # noqa: F401
    FitConfig,
    FitResult,
    TripRecord,
    build_tables,
    evaluate,
    fit,
    read_dataset,
    write_dataset,
)
from .simulator import (  # noqa: F401
    FixedSetScenario,
    SimConfig,
    SimResult,
    SingleCouponScenario,
    generate_dataset,
    simulate_promotion,
)
from .data_pipeline import (  # noqa: F401
    CouponRecord,
    CurveBin,
    IntegrityReport,
    OrderRecord,
    build_dataset,
    read_coupons_csv,
    read_orders_csv,
    redemption_ratio_curve,
    write_curve_csv,
)
