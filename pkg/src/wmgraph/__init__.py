"""Anisotropic white-matter graphs and heat-kernel graph filtering of fMRI."""

__version__ = "0.1.0"

from .activation import (
    DesignMatrix,
    GLMActivation,
    RocCurve,
    TMap,
    average_roc,
    bh_reject,
    glm_fit,
    roc_curve,
    t_map,
    threshold_fdr,
    threshold_fixed,
)
from .baseline import GaussianSmoother, GaussianSpec, gaussian_filter, masked_uniform_graph
from .graph import (
    BuildReport,
    GraphBuildConfig,
    NeighborhoodSpec,
    VoxelGraph,
    build_graph,
    connected_components,
    edge_weight,
    laplacian_apply,
    load_graph,
    neighborhood_directions,
    odf_transition_mass,
    save_graph,
    solid_angle_membership,
)
from .phantom import (
    ActivationPattern,
    BlockParadigm,
    Grid,
    PhantomSpec,
    block_regressor,
    combine_patterns,
    make_phantom,
    streamline_activation,
    synthesize_timeseries,
)
from .spectral import (
    ChebApprox,
    GraphHeatFilter,
    HeatKernel,
    cheb_coefficients,
    cheb_filter_apply,
    exact_filter_apply,
    filter_timeseries,
    heat_kernel_eval,
)
from .volume_io import (
    Mask,
    ODFField,
    StreamlineSet,
    Volume3D,
    Volume4D,
    read_odf_field,
    read_streamlines,
    read_volume,
    write_odf_field,
    write_streamlines,
    write_volume,
)
