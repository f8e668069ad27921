"""
Ablation harness

Each experiment is a list of named variants, each a set of config
overrides on top of the shared base run. Every variant is trained with the
same seeds and budget, scored on the test windows, and the median over seeds
is reported next to the unmodified baseline.
"""

from dataclasses import dataclass, field
from typing import Callable, Dict, List, Sequence

import numpy as np
import pandas as pd
import structlog

from .datasets import WindowedDataset
from .exceptions import ConfigError
from .metrics import usable_horizons
from .models import CopyAxis, ModelConfig, Padding, Supervision, TrainConfig
from .network import count_parameters, init_model
from .training import evaluate, train

logger = structlog.get_logger(__name__)

TOTAL_GCBS = 12
BASELINE = "baseline"


@dataclass
class Variant:
    name: str
    model: Dict[str, object] = field(default_factory=dict)
    train: Dict[str, object] = field(default_factory=dict)

    def apply(self, model: ModelConfig, train_cfg: TrainConfig):
        """Base configs with this variant's overrides"""
        return (ModelConfig(**{**model.model_dump(), **self.model}),
                TrainConfig(**{**train_cfg.model_dump(), **self.train}))


def gcb_split(stages: int, total: int = TOTAL_GCBS) -> Dict[str, int]:
    """Spread `total` GCBs evenly over the stages, encoder getting the smaller half"""
    per_stage = max(2, total // stages)
    encoder = per_stage // 2
    return {"num_stages": stages, "encoder_gcbs": encoder, "decoder_gcbs": per_stage - encoder}


def total_gcbs(config: ModelConfig) -> int:
    """GCBs applied across all stages"""
    return (config.encoder_gcbs + config.decoder_gcbs) * config.num_stages


def stages_variants() -> List[Variant]:
    """One to six stages; T=5 cannot split 12 evenly and runs 10, see the gcbs column"""
    return [Variant(f"stages_{t}", model=gcb_split(t)) for t in range(1, 7)]


def supervision_variants() -> List[Variant]:
    """Single stage vs intermediate supervision kinds"""
    return [
        Variant("single_stage", model=gcb_split(1)),
        Variant("aas_all_stages", train={"intermediate_supervision": Supervision.AAS}),
        Variant("final_loss_only", train={"intermediate_supervision": Supervision.NONE}),
        Variant("gt_all_stages", train={"intermediate_supervision": Supervision.GT}),
    ]


def copy_variants() -> List[Variant]:
    """Copy count and axis of the Encoder-Copy-Decoder"""
    return [
        Variant("no_copy", model={"copy_count": 0}),
        Variant("temporal_x1", model={"copy_count": 1, "copy_axis": CopyAxis.TEMPORAL}),
        Variant("temporal_x3", model={"copy_count": 3, "copy_axis": CopyAxis.TEMPORAL}),
        Variant("spatial_x1", model={"copy_count": 1, "copy_axis": CopyAxis.SPATIAL}),
        Variant("channel_x1", model={"copy_count": 1, "copy_axis": CopyAxis.CHANNEL}),
    ]


def targets_variants() -> List[Variant]:
    """AAS vs Gaussian intermediate targets"""
    return [
        Variant("aas", train={"intermediate_supervision": Supervision.AAS}),
        Variant("gaussian_15", train={"intermediate_supervision": Supervision.GAUSSIAN, "gaussian_window": 15}),
        Variant("gaussian_21", train={"intermediate_supervision": Supervision.GAUSSIAN, "gaussian_window": 21}),
    ]


def padding_variants() -> List[Variant]:
    """Single-stage model with last-pose vs oracle Mean-x padding"""
    single = gcb_split(1)
    return [
        Variant("last_pose", model=single, train={"padding": Padding.LAST_POSE}),
        Variant("mean_5", model=single, train={"padding": Padding.MEAN_X, "padding_mean_x": 5}),
        Variant("mean_25", model=single, train={"padding": Padding.MEAN_X, "padding_mean_x": 25}),
    ]


def mean_vs_aas_variants() -> List[Variant]:
    """Two-stage Mean-x targets vs two-stage AAS"""
    two = gcb_split(2)
    return [
        Variant("two_stage_mean_5", model=two,
                train={"intermediate_supervision": Supervision.MEAN_X, "target_mean_x": 5}),
        Variant("two_stage_mean_25", model=two,
                train={"intermediate_supervision": Supervision.MEAN_X, "target_mean_x": 25}),
        Variant("two_stage_aas", model=two, train={"intermediate_supervision": Supervision.AAS}),
    ]


EXPERIMENTS: Dict[str, Callable[[], List[Variant]]] = {
    "stages": stages_variants,
    "supervision": supervision_variants,
    "copy": copy_variants,
    "targets": targets_variants,
    "padding": padding_variants,
    "mean_vs_aas": mean_vs_aas_variants,
}


def variants_for(experiment: str) -> List[Variant]:
    """Baseline followed by the experiment's variants"""
    if experiment not in EXPERIMENTS:
        raise ConfigError("experiment", f"unknown experiment '{experiment}' (choose from {sorted(EXPERIMENTS)})")
    return [Variant(BASELINE)] + EXPERIMENTS[experiment]()


def score_variant(variant: Variant, model_cfg: ModelConfig, train_cfg: TrainConfig,
                  train_data: WindowedDataset, test_data: WindowedDataset, seed: int) -> Dict[str, float]:
    """Train one variant with one seed and score it on the test windows"""
    model_cfg, train_cfg = variant.apply(model_cfg, train_cfg)
    train_cfg = train_cfg.model_copy(update={"seed": seed})
    model = init_model(model_cfg, seed=seed)
    train(model, train_data, train_cfg)
    horizons = usable_horizons(train_cfg.horizons_ms, test_data.fps, model_cfg.t_f)
    report = evaluate(model, test_data, horizons, train_cfg)[0]
    scores = {f"{h:g}ms": e for h, e in zip(report.horizons_ms, report.errors)}
    scores["mean"] = report.average
    logger.info("variant_scored", variant=variant.name, seed=seed, mean=report.average)
    return scores


def run_ablation(experiment: str, model_cfg: ModelConfig, train_cfg: TrainConfig,
                 train_data: WindowedDataset, test_data: WindowedDataset,
                 seeds: Sequence[int] = (0,)) -> pd.DataFrame:
    """One row per variant: median over seeds of each horizon and of the all-frame mean"""
    if not seeds:
        raise ConfigError("seeds", "at least one seed is required")
    rows = []
    for variant in variants_for(experiment):
        vcfg, _ = variant.apply(model_cfg, train_cfg)
        per_seed = [score_variant(variant, model_cfg, train_cfg, train_data, test_data, s) for s in seeds]
        row = {"variant": variant.name, "parameters": count_parameters(vcfg), "gcbs": total_gcbs(vcfg),
               "seeds": len(seeds)}
        for column in per_seed[0]:
            row[column] = float(np.median([scores[column] for scores in per_seed]))
        rows.append(row)
    table = pd.DataFrame(rows)
    table["delta_vs_baseline"] = table["mean"] - float(table.loc[table["variant"] == BASELINE, "mean"].iloc[0])
    return table
