"""Density estimation for timestamped GPS data from a single subject.

Average, interval and conditional GPS densities as weighted kernel
estimators, plus anchor detection, activity spaces, day clustering and a
Simple Movement Model simulator for benchmarking.
"""

from .activity import (ActivitySpace, AnchorDetector, AnchorEstimate, WeightedEDF, activity_space,
                       anchor_level_threshold, chi2_2_cdf, detect_anchors, level_set,
                       region_probability_bounds, weighted_edf)
from .cluster import (ClusterLabels, DayClustering, Dendrogram, DistanceMatrix, cluster_conditional_density,
                      conditional_center, cut, distance_matrix, log_density_distance, per_day_density,
                      single_linkage)
from .data import Day, GpsDataset
from .evaluation import ExperimentConfig, MiseTable, mise, reference_bandwidths, run_experiment
from .grid import DensityField, GridSpec, RegionMask, TimeGrid
from .kde import (Bandwidths, DayWeights, GPSDensity, UnsupportedTimeWarning, conditional_kde,
                  daily_average_conditional, integrated_conditional_kde, interval_kde, naive_kde,
                  time_weighted_kde)
from .simulate import load_world, simulate_dataset

__version__ = "0.1.0"

__all__ = [
    "ActivitySpace", "AnchorDetector", "AnchorEstimate", "Bandwidths", "ClusterLabels", "Day",
    "DayClustering", "DayWeights", "Dendrogram", "DensityField", "DistanceMatrix", "ExperimentConfig",
    "GPSDensity", "GpsDataset", "GridSpec", "MiseTable", "RegionMask", "TimeGrid", "UnsupportedTimeWarning",
    "WeightedEDF", "activity_space", "anchor_level_threshold", "chi2_2_cdf", "cluster_conditional_density",
    "conditional_center", "conditional_kde", "cut", "daily_average_conditional", "detect_anchors",
    "distance_matrix", "integrated_conditional_kde", "interval_kde", "level_set", "load_world",
    "log_density_distance", "mise", "naive_kde", "per_day_density", "reference_bandwidths",
    "region_probability_bounds", "run_experiment", "simulate_dataset", "single_linkage", "time_weighted_kde",
    "weighted_edf",
]
