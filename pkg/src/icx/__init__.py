"""Find the independent components behind a linear-head classifier's decisions.

Typical flow: ``fit_pca`` to gauge redundancy, ``select_components`` to
pick the smallest number of independent components that keeps the
validation kappa, ``normalize_components`` to fix their signs, then
``component_contributions`` and ``spatial_ic_map`` to explain single images.
"""

from .errors import IcxError
from .ica import IcaConfig, IcModel, fit_ica, inverse_transform, normalize_components, transform
from .io_formats import FeatureMatrix, LabelVector, SpatialFeatureMap
from .metrics import ConfusionMatrix, accuracy, confusion, qwk
from .ordinal_head import FitConfig, LinearHead, evaluate, fit_head, predict
from .pca import PcaModel, explained_variance_report, fit_pca, whiten
from .scoremap import component_contributions, project_to_input, receptive_field, spatial_ic_map
from .selection import SelectionReport, report_to_text, select_components

__version__ = "0.1.0"
