"""heightcast: CPU rendering of adaptive heightfields.

Smooths quadtree-style cell data with truncated-Gaussian radial basis
functions, discretizes the visible area into view-dependent cascade
rasters, and ray casts those rasters with maximum-mipmap acceleration.
"""

from .cascade import (CameraView, CascadeLayout, CascadePolygon,
                      NothingVisibleError, ViewAxis, clip_cascade_polygons,
                      fit_cascade_layouts, fit_layout, plan_cascades,
                      split_depths, view_axis_2d, visible_hull)
from .discretize import CascadeRaster, discretize_cascade, write_pgm
from .grid import (AdaptiveGrid, Cell, GridFormatError, InfluenceTable,
                   OutsideDomainError, Rect, build_influence_table,
                   influencers_at, load_grid)
from .raycast import (HitRecord, MaxMipmap, build_max_mipmap,
                      cast_through_cascades, intersect_bilinear_patch,
                      traverse_cascade)
from .rbf import RbfParams, SampleValue, approximate, weight
from .render import (CascadeSettings, Frame, FrameConfig, depth_colormap,
                     render_frame, write_ppm)
from .scene import Scene, SceneError, demo_scene, load_scene, parse_scene, serialize_scene
from .synth import SYNTH_KINDS, generate_synthetic

__version__ = "0.1.0"
