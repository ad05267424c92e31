"""Config-driven glue: dataset preparation, training-set extraction, training."""
from __future__ import annotations

import logging
from dataclasses import dataclass

import numpy as np

from .config import ExperimentConfig, TrainingConfig
from .lstm import LstmModel, init_model, train
from .meter_data import Dataset, MeterRecord, load_dataset, split_dataset, stable_hash, synthetic_dataset
from .theft import ScenarioSpec, build_scenario

log = logging.getLogger(__name__)


@dataclass
class PreparedData:
    records: list[MeterRecord]
    full: Dataset
    train: Dataset
    eval: Dataset


def prepare_data(cfg: ExperimentConfig) -> PreparedData:
    d = cfg.data
    if d.metadata:
        records, full = load_dataset(d.metadata, d.capacity, d.tl_assumed, d.tl_actual)
    else:
        records, full = synthetic_dataset(
            d.n_groups, d.n_children, d.synthetic_hours, cfg.seed, d.capacity, d.tl_assumed, d.tl_actual
        )
    train_series, eval_series = {}, {}
    for meter_id, s in full.series.items():
        train_series[meter_id], eval_series[meter_id] = split_dataset(s, d.eval_fraction, cfg.watchdog.window_len)
    return PreparedData(records, full, Dataset(full.groups, train_series), Dataset(full.groups, eval_series))


def training_windows(train: Dataset, tcfg: TrainingConfig, seed: int, window_len: int = 72):
    """Non-overlapping labelled windows from a theft-injected training split.

    At most ``tcfg.max_windows`` windows are kept, sampled without
    replacement. The scenario seed is salted so training thieves are drawn
    independently of the evaluation scenarios that share ``seed``.
    """
    salted = stable_hash("train-scenario", seed) & 0xFFFFFFFF
    spec = ScenarioSpec("train", tcfg.severity_low, tcfg.severity_high, tcfg.thief_rate, salted)
    instance = build_scenario(train.groups, train.series, spec)
    xs, ys = [], []
    for meter_id in train.meter_ids:
        ts = instance.series[meter_id]
        n = len(ts) // window_len * window_len
        xs.append(ts.reported[:n].reshape(-1, window_len))
        ys.append(ts.tampered[:n].reshape(-1, window_len))
    X = np.concatenate(xs)
    Y = np.concatenate(ys).astype(np.float64)
    if tcfg.max_windows and len(X) > tcfg.max_windows:
        rng = np.random.default_rng(stable_hash("train-subsample", seed))
        keep = np.sort(rng.choice(len(X), tcfg.max_windows, replace=False))
        X, Y = X[keep], Y[keep]
    return X, Y


def train_model(cfg: ExperimentConfig, data: PreparedData) -> tuple[LstmModel, list[float]]:
    tcfg = cfg.train
    X, Y = training_windows(data.train, tcfg, cfg.seed, cfg.watchdog.window_len)
    log.info("training on %d windows (%.1f%% tampered steps)", len(X), 100 * Y.mean())
    model = init_model(
        tcfg.hidden_size,
        seed=stable_hash("init", tcfg.seed) & 0xFFFFFFFF,
        decision_threshold=cfg.watchdog.decision_threshold,
        window_len=cfg.watchdog.window_len,
    )
    return train(model, X, Y, tcfg.optimizer_config())
