"""Random walks on lamplighter groups and their entropy/invariance experiments."""

from .groups import (
    Configuration,
    LampElement,
    PairElement,
    SemiDiagElement,
    add_configs,
    embed_pair,
    format_element,
    hom_pi,
    hom_pi_prime,
    hom_pibar,
    lamp_inv,
    lamp_mul,
    parse_configuration,
    parse_element,
    semidiag_inv,
    semidiag_mul,
    shift,
    single,
)
from .measures import (
    SparseMeasure,
    cesaro,
    convolve,
    convolve_power,
    dirac,
    entropy,
    lazy,
    marginals,
    measure_from_csv,
    measure_to_csv,
    mixture,
    product_measure,
    pushforward,
    reflect,
    translate,
    tv,
    tv_uncertainty,
)
from .constructions import (
    AlphaSpec,
    CouplingSpec,
    PrescribedImage,
    ZETA2_C,
    alpha_moment,
    coupling_measure,
    k_set,
    kappa,
    lambda_alpha,
    mu_alpha,
    mu_tilde,
    omega_image_closed,
    phi_interval_group,
    sample_alpha,
)
from .walks import (
    BaseWalk,
    PathSample,
    ProjectedWalk,
    ReflectedWalk,
    SemiDiagWalk,
    WalkStream,
    run_path,
    sample_increment,
    simulate_window,
    stopping_tau,
    swap_transform,
)

__version__ = "0.1.0"
