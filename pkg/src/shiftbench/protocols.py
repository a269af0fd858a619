"""The four experiment generators: streams of per-sample evaluation records.

Protocols
---------
prior             vary the class prevalence of training and test draws
                  independently; class-conditional distributions untouched
global_covariate  vary the category mix (A vs B) and the class prevalence of
                  training and test draws independently
local_covariate   shift the class-conditional of the positive class only, by
                  adding/removing positives of category A; also emits control
                  draws that preserve the class-conditionals at the same
                  nominal prevalences (the "control" arm)
concept           move the star cut point between training and test

Degree conventions: prior uses (p_U - p_L) rounded to one decimal; global
covariate uses (alpha_L - alpha_U); local covariate uses (p_U - p_L) rounded
to two decimals; concept uses the integer (c_L - c_U).

Repetitions are independent: every draw's seed is derived from the master
seed and the draw's structural coordinates, so runs are bit-reproducible for
any worker count.
"""

from __future__ import annotations

import dataclasses
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass
from fractions import Fraction
from typing import Callable, Sequence

import numpy as np

from .classifier import grid_search
from .core import (
    BinaryDataset,
    Pool,
    PoolExhaustionError,
    Sample,
    StarDataset,
    binarise_dataset,
    is_text_payload,
    round_half_up,
    sample_at_prevalence,
    split_stratified,
    stratified_split_indices,
)
from .datagen import fit_vocabulary, vectorise
from .evaluation import ExperimentRecord
from .quantifiers import BENCHMARK_METHODS, MLPE, fit_evidence, quantifier_factory
from .seeds import derive_seed

PRIOR = "prior"
GLOBAL_COVARIATE = "global_covariate"
LOCAL_COVARIATE = "local_covariate"
CONCEPT = "concept"
PROTOCOLS = (PRIOR, GLOBAL_COVARIATE, LOCAL_COVARIATE, CONCEPT)

STUB_ESTIMATE = 0.5  # emitted by dry runs in place of a fitted method


def _tenths(lo: int, hi: int) -> tuple[float, ...]:
    return tuple(i / 10 for i in range(lo, hi + 1))


@dataclass
class ProtocolConfig:
    """Sizes, grids and seeds of one protocol run.

    Defaults mirror the full-scale benchmark settings (training size 5,000,
    test size 500, 10 repetitions, 50 samples per configuration); call
    :meth:`desk` for a configuration that finishes in seconds.
    """

    protocol: str
    train_size: int = 5000
    test_size: int = 500
    repetitions: int = 10
    samples_per_config: int = 50
    master_seed: int = 0
    methods: tuple[str, ...] = BENCHMARK_METHODS
    split_fraction: float = 0.5
    cut_point: float = 3.0

    # classifier settings (used directly unless grid_search is on)
    C: float = 1000.0
    class_weight: str | None = None
    folds: int = 10
    bins: int = 10
    grid_search: bool = False

    # prior-shift grids: endpoints replaced by 0.02 / 0.98 on the training side
    prior_train_prevalences: tuple[float, ...] = (0.02,) + _tenths(1, 9) + (0.98,)
    prior_test_prevalences: tuple[float, ...] = _tenths(0, 10)

    # global-covariate grids
    covariate_class_prevalences: tuple[float, ...] = (0.25, 0.50, 0.75)
    covariate_mixtures: tuple[float, ...] = _tenths(0, 10)

    # local-covariate grid and the control-arm draw count per cell
    local_test_prevalences: tuple[float, ...] = tuple(
        round(0.25 + 0.05 * i, 2) for i in range(11)
    )
    local_control_draws: int = 10

    # concept-shift cut points; optionally force (p_L, p_U)
    concept_cut_points: tuple[float, ...] = (1.5, 2.5, 3.5, 4.5)
    concept_force_prevalence: tuple[float, float] | None = None

    def __post_init__(self):
        if self.protocol not in PROTOCOLS:
            raise ValueError(f"unknown protocol {self.protocol!r}; one of {PROTOCOLS}")
        if self.train_size < 2 or self.test_size < 2:
            raise ValueError("train_size and test_size must be >= 2")
        if self.repetitions < 1 or self.samples_per_config < 1:
            raise ValueError("repetitions and samples_per_config must be >= 1")
        if not self.methods:
            raise ValueError("at least one method is required")
        self.methods = tuple(self.methods)
        for m in self.methods:
            quantifier_factory(m)  # unknown names fail fast

    def desk(self) -> "ProtocolConfig":
        """A scaled-down copy: 2 repetitions, 5 samples per configuration."""
        return dataclasses.replace(self, repetitions=2, samples_per_config=5)

    def to_dict(self) -> dict:
        d = dataclasses.asdict(self)
        d["concept_force_prevalence"] = (
            list(self.concept_force_prevalence)
            if self.concept_force_prevalence
            else None
        )
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "ProtocolConfig":
        known = {f.name for f in dataclasses.fields(cls)}
        unknown = set(d) - known
        if unknown:
            raise ValueError(f"unknown config fields: {sorted(unknown)}")
        kwargs = dict(d)
        for key, value in kwargs.items():
            if isinstance(value, list):
                kwargs[key] = tuple(value)
        if kwargs.get("concept_force_prevalence") is not None:
            kwargs["concept_force_prevalence"] = tuple(kwargs["concept_force_prevalence"])
        return cls(**kwargs)


def count_records_per_method(cfg: ProtocolConfig) -> int:
    """Closed-form record count one method contributes to a full run."""
    base = cfg.samples_per_config * cfg.repetitions
    if cfg.protocol == PRIOR:
        return len(cfg.prior_train_prevalences) * len(cfg.prior_test_prevalences) * base
    if cfg.protocol == GLOBAL_COVARIATE:
        cells = len(cfg.covariate_class_prevalences) * len(cfg.covariate_mixtures)
        return cells * cells * base
    if cfg.protocol == LOCAL_COVARIATE:
        return len(cfg.local_test_prevalences) * (1 + cfg.local_control_draws) * base
    if cfg.protocol == CONCEPT:
        return len(cfg.concept_cut_points) ** 2 * base
    raise ValueError(f"unknown protocol {cfg.protocol!r}")


def count_records(cfg: ProtocolConfig) -> int:
    return count_records_per_method(cfg) * len(cfg.methods)


# ---------------------------------------------------------------------------
# shared machinery
# ---------------------------------------------------------------------------


def exact_ceil(fraction_value: float, n: int) -> int:
    """ceil(fraction_value * n) treating the float as the nearest simple rational.

    Grid fractions like 0.3 are binary-inexact; snapping to the nearest
    rational with a small denominator keeps sizes like ceil(0.3 * 5000) at
    exactly 1500.
    """
    frac = Fraction(fraction_value).limit_denominator(10**6) * n
    return -((-frac.numerator) // frac.denominator)


def _fmt(v: float) -> str:
    return format(v, "g")


def _round_degree(value: float, decimals: int) -> float:
    return round(value, decimals) + 0.0  # normalise -0.0


def merge_samples(parts: Sequence[Sample]) -> Sample:
    parts = [p for p in parts if p is not None]
    if not parts:
        raise ValueError("no sample parts to merge")
    xs = [p.x for p in parts]
    if hasattr(xs[0], "tocsr"):
        from scipy import sparse

        x = sparse.vstack(xs).tocsr()
    else:
        x = np.concatenate(xs)
    return Sample(x, np.concatenate([p.labels for p in parts]))


def _draw(pool: Pool, prevalence: float, size: int, seed: int, ctx: str) -> Sample:
    try:
        return sample_at_prevalence(pool, prevalence, size, seed)
    except PoolExhaustionError as exc:
        raise PoolExhaustionError(
            f"{exc.label_name} [{ctx}]", exc.requested, exc.available
        ) from None


def _featurise_train(x):
    """Returns (training features, featuriser for later samples).

    Text payloads get a tf-idf space fitted on the training documents only;
    numeric payloads pass through unchanged.
    """
    if is_text_payload(x):
        vocab = fit_vocabulary(list(x))
        return vectorise(list(x), vocab), lambda xs: vectorise(list(xs), vocab)
    return x, lambda xs: xs


def _fit_methods(cfg: ProtocolConfig, train: Sample, fit_seed: int):
    """Fit every configured method on one training draw.

    Methods sharing classifier hyperparameters share one trained classifier
    and one set of out-of-fold posteriors.  Returns (quantifiers by name,
    featuriser for test samples).
    """
    x, featurise = _featurise_train(train.x)
    labels = train.labels

    method_params: dict[str, dict] = {}
    if cfg.grid_search:
        pool = Pool(BinaryDataset(x, labels))
        for name in cfg.methods:
            chosen = grid_search(
                pool,
                lambda params, _n=name: quantifier_factory(
                    _n, folds=cfg.folds, bins=cfg.bins, seed=fit_seed, **params
                ),
                seed=derive_seed(fit_seed, "grid", name),
                sample_size=cfg.test_size,
            )
            method_params[name] = chosen
    else:
        for name in cfg.methods:
            method_params[name] = {"C": cfg.C, "class_weight": cfg.class_weight}

    unfitted = {
        name: quantifier_factory(
            name, folds=cfg.folds, bins=cfg.bins, seed=fit_seed, **method_params[name]
        )
        for name in cfg.methods
    }
    by_key: dict[tuple, list[str]] = {}
    for name, q in unfitted.items():
        if not isinstance(q, MLPE):
            by_key.setdefault((q.C, q.class_weight), []).append(name)
    evidences = {
        key: fit_evidence(
            x,
            labels,
            C=key[0],
            class_weight=key[1],
            folds=cfg.folds,
            seed=fit_seed,
            need_oof=any(unfitted[n].needs_oof for n in names),
        )
        for key, names in by_key.items()
    }
    quantifiers = {}
    for name, q in unfitted.items():
        if isinstance(q, MLPE):
            quantifiers[name] = q.fit(x, labels)
        else:
            quantifiers[name] = q.fit_evidence(evidences[(q.C, q.class_weight)])
    return quantifiers, featurise


def _emit(
    cfg: ProtocolConfig,
    records: list[ExperimentRecord],
    rep: int,
    config: str,
    degree: float,
    quantifiers,
    featurise,
    sample: Sample | None,
    nominal_prevalence: float,
):
    """Append one record per method for one test sample (or a dry-run stub)."""
    if sample is None:
        for name in cfg.methods:
            records.append(
                ExperimentRecord(
                    protocol=cfg.protocol,
                    method=name,
                    repetition=rep,
                    config=config,
                    degree=degree,
                    true_prevalence=nominal_prevalence,
                    estimate=STUB_ESTIMATE,
                )
            )
        return
    x = featurise(sample.x)
    for name in cfg.methods:
        records.append(
            ExperimentRecord(
                protocol=cfg.protocol,
                method=name,
                repetition=rep,
                config=config,
                degree=degree,
                true_prevalence=sample.true_prevalence,
                estimate=quantifiers[name].quantify(x),
            )
        )


# ---------------------------------------------------------------------------
# pool preparation
# ---------------------------------------------------------------------------


def _ensure_binary(dataset, cut_point: float) -> BinaryDataset:
    if isinstance(dataset, StarDataset):
        return binarise_dataset(dataset, cut_point)
    if isinstance(dataset, BinaryDataset):
        return dataset
    raise TypeError(f"expected a star or binary dataset, got {type(dataset).__name__}")


@dataclass(frozen=True)
class _SplitPools:
    train: Pool
    test: Pool


@dataclass(frozen=True)
class _CategoryPools:
    train_a: Pool
    test_a: Pool
    train_b: Pool
    test_b: Pool


@dataclass(frozen=True)
class _StarPools:
    dataset: StarDataset
    train_indices: np.ndarray
    test_indices: np.ndarray


def _prepare_pools(cfg: ProtocolConfig, dataset):
    seed = derive_seed(cfg.master_seed, cfg.protocol, "split")
    if cfg.protocol == PRIOR:
        binary = _ensure_binary(dataset, cfg.cut_point)
        train, test = split_stratified(binary, cfg.split_fraction, seed)
        return _SplitPools(train, test)
    if cfg.protocol in (GLOBAL_COVARIATE, LOCAL_COVARIATE):
        binary = _ensure_binary(dataset, cfg.cut_point)
        if binary.category is None:
            raise ValueError(f"the {cfg.protocol} protocol needs category tags")
        pools = {}
        for cat in ("A", "B"):
            subset = binary.take(np.flatnonzero(binary.category == cat))
            if len(subset) == 0:
                raise ValueError(f"no datapoints in category {cat}")
            pools[cat] = split_stratified(
                subset, cfg.split_fraction, derive_seed(seed, cat)
            )
        return _CategoryPools(
            train_a=pools["A"][0],
            test_a=pools["A"][1],
            train_b=pools["B"][0],
            test_b=pools["B"][1],
        )
    if cfg.protocol == CONCEPT:
        if not isinstance(dataset, StarDataset):
            raise TypeError("the concept protocol needs star-labelled data")
        balanced = _balance_stars(dataset, derive_seed(seed, "balance"))
        first, second = stratified_split_indices(
            balanced.stars, cfg.split_fraction, derive_seed(seed, "halves")
        )
        return _StarPools(dataset=balanced, train_indices=first, test_indices=second)
    raise ValueError(f"unknown protocol {cfg.protocol!r}")


def _balance_stars(dataset: StarDataset, seed: int) -> StarDataset:
    """The largest subset with a uniform star distribution (seeded draw)."""
    rng = np.random.default_rng(seed)
    counts = {s: np.flatnonzero(dataset.stars == s) for s in (1, 2, 3, 4, 5)}
    smallest = min(len(idx) for idx in counts.values())
    if smallest == 0:
        missing = [s for s, idx in counts.items() if len(idx) == 0]
        raise ValueError(f"cannot balance stars: no items with stars {missing}")
    chosen = np.sort(
        np.concatenate([rng.choice(idx, smallest, replace=False) for idx in counts.values()])
    )
    return dataset.take(chosen)


def _index_by_star(subset: StarDataset) -> dict[int, np.ndarray]:
    return {s: np.flatnonzero(subset.stars == s) for s in (1, 2, 3, 4, 5)}


# keep the split halves alongside their index maps
@dataclass(frozen=True)
class _StarHalf:
    dataset: StarDataset
    by_star: dict[int, np.ndarray]


# ---------------------------------------------------------------------------
# repetition runners (dry runs share the exact same loop structure)
# ---------------------------------------------------------------------------


def _prior_repetition(cfg, pools, rep, dry) -> list[ExperimentRecord]:
    records: list[ExperimentRecord] = []
    for i_pl, p_l in enumerate(cfg.prior_train_prevalences):
        quantifiers = featurise = None
        if not dry:
            train = _draw(
                pools.train,
                p_l,
                cfg.train_size,
                derive_seed(cfg.master_seed, PRIOR, rep, "train", i_pl),
                f"prior rep={rep} pL={_fmt(p_l)}",
            )
            quantifiers, featurise = _fit_methods(
                cfg, train, derive_seed(cfg.master_seed, PRIOR, rep, "fit", i_pl)
            )
        for r in range(cfg.samples_per_config):
            for i_pu, p_u in enumerate(cfg.prior_test_prevalences):
                sample = None
                if not dry:
                    sample = _draw(
                        pools.test,
                        p_u,
                        cfg.test_size,
                        derive_seed(cfg.master_seed, PRIOR, rep, "test", i_pl, r, i_pu),
                        f"prior rep={rep} pL={_fmt(p_l)} pU={_fmt(p_u)} round={r}",
                    )
                _emit(
                    cfg,
                    records,
                    rep,
                    f"pL={_fmt(p_l)};pU={_fmt(p_u)};r={r}",
                    _round_degree(p_u - p_l, 1),
                    quantifiers,
                    featurise,
                    sample,
                    p_u,
                )
    return records


def _covariate_pair(cfg, pool_a, pool_b, prevalence, alpha, total, seed, ctx):
    """Draw size ceil(alpha*total) from A and the complement from B, both at
    the same class prevalence."""
    n_a = exact_ceil(alpha, total)
    n_b = total - n_a
    parts = []
    if n_a:
        parts.append(_draw(pool_a, prevalence, n_a, derive_seed(seed, "A"), ctx))
    if n_b:
        parts.append(_draw(pool_b, prevalence, n_b, derive_seed(seed, "B"), ctx))
    return merge_samples(parts)


def _global_covariate_repetition(cfg, pools, rep, dry) -> list[ExperimentRecord]:
    records: list[ExperimentRecord] = []
    for i_pl, p_l in enumerate(cfg.covariate_class_prevalences):
        for i_al, a_l in enumerate(cfg.covariate_mixtures):
            quantifiers = featurise = None
            if not dry:
                train = _covariate_pair(
                    cfg,
                    pools.train_a,
                    pools.train_b,
                    p_l,
                    a_l,
                    cfg.train_size,
                    derive_seed(cfg.master_seed, GLOBAL_COVARIATE, rep, "train", i_pl, i_al),
                    f"global_covariate rep={rep} pL={_fmt(p_l)} aL={_fmt(a_l)}",
                )
                quantifiers, featurise = _fit_methods(
                    cfg,
                    train,
                    derive_seed(cfg.master_seed, GLOBAL_COVARIATE, rep, "fit", i_pl, i_al),
                )
            for r in range(cfg.samples_per_config):
                for i_pu, p_u in enumerate(cfg.covariate_class_prevalences):
                    for i_au, a_u in enumerate(cfg.covariate_mixtures):
                        sample = None
                        if not dry:
                            sample = _covariate_pair(
                                cfg,
                                pools.test_a,
                                pools.test_b,
                                p_u,
                                a_u,
                                cfg.test_size,
                                derive_seed(
                                    cfg.master_seed,
                                    GLOBAL_COVARIATE,
                                    rep,
                                    "test",
                                    i_pl,
                                    i_al,
                                    r,
                                    i_pu,
                                    i_au,
                                ),
                                f"global_covariate rep={rep} pU={_fmt(p_u)} aU={_fmt(a_u)} round={r}",
                            )
                        _emit(
                            cfg,
                            records,
                            rep,
                            f"pL={_fmt(p_l)};aL={_fmt(a_l)};pU={_fmt(p_u)};aU={_fmt(a_u)};r={r}",
                            _round_degree(a_l - a_u, 1),
                            quantifiers,
                            featurise,
                            sample,
                            p_u,
                        )
    return records


def _local_positive_count(cfg, p_u: float) -> int:
    """Positives of category A to add so the base mixture reaches p_u.

    The base mixture is test_size/6 negatives from A plus test_size/2 items
    from B at prevalence 1/3 (overall prevalence 1/4); solving
    p_u = (base_pos + POS) / (base_total + POS) gives POS, rounded half up.
    """
    base_pos = cfg.test_size / 6.0
    base_total = 2.0 * cfg.test_size / 3.0
    if p_u >= 1.0:
        raise ValueError("local covariate shift cannot reach prevalence 1.0")
    pos = (p_u * base_total - base_pos) / (1.0 - p_u)
    return max(0, round_half_up(pos))


def _local_covariate_repetition(cfg, pools, rep, dry) -> list[ExperimentRecord]:
    records: list[ExperimentRecord] = []
    half = cfg.train_size // 2
    p_train = 0.5
    quantifiers = featurise = None
    if not dry:
        train = merge_samples(
            [
                _draw(
                    pools.train_a,
                    2.0 / 3.0,
                    half,
                    derive_seed(cfg.master_seed, LOCAL_COVARIATE, rep, "trainA"),
                    f"local_covariate rep={rep} train A",
                ),
                _draw(
                    pools.train_b,
                    1.0 / 3.0,
                    half,
                    derive_seed(cfg.master_seed, LOCAL_COVARIATE, rep, "trainB"),
                    f"local_covariate rep={rep} train B",
                ),
            ]
        )
        quantifiers, featurise = _fit_methods(
            cfg, train, derive_seed(cfg.master_seed, LOCAL_COVARIATE, rep, "fit")
        )
    neg_a_size = round_half_up(cfg.test_size / 6.0)
    base_b_size = cfg.test_size // 2
    for r in range(cfg.samples_per_config):
        base = None
        if not dry:
            base = [
                _draw(
                    pools.test_a,
                    0.0,
                    neg_a_size,
                    derive_seed(cfg.master_seed, LOCAL_COVARIATE, rep, "baseA", r),
                    f"local_covariate rep={rep} round={r} base A",
                ),
                _draw(
                    pools.test_b,
                    1.0 / 3.0,
                    base_b_size,
                    derive_seed(cfg.master_seed, LOCAL_COVARIATE, rep, "baseB", r),
                    f"local_covariate rep={rep} round={r} base B",
                ),
            ]
        for i_pu, p_u in enumerate(cfg.local_test_prevalences):
            pos_a = _local_positive_count(cfg, p_u)
            degree = _round_degree(p_u - p_train, 2)
            sample = None
            if not dry:
                parts = list(base)
                if pos_a:
                    parts.append(
                        _draw(
                            pools.test_a,
                            1.0,
                            pos_a,
                            derive_seed(
                                cfg.master_seed, LOCAL_COVARIATE, rep, "posA", r, i_pu
                            ),
                            f"local_covariate rep={rep} round={r} pU={_fmt(p_u)}",
                        )
                    )
                sample = merge_samples(parts)
            _emit(
                cfg,
                records,
                rep,
                f"pU={_fmt(p_u)};arm=shift;r={r}",
                degree,
                quantifiers,
                featurise,
                sample,
                p_u,
            )
            # control arm: same size and nominal prevalence, but drawn with the
            # training class-conditionals (positives 2/3 A, negatives 2/3 B)
            size = neg_a_size + base_b_size + pos_a
            for d in range(cfg.local_control_draws):
                control = None
                if not dry:
                    control = _control_draw(
                        cfg,
                        pools,
                        p_u,
                        size,
                        derive_seed(
                            cfg.master_seed, LOCAL_COVARIATE, rep, "control", r, i_pu, d
                        ),
                        f"local_covariate rep={rep} round={r} pU={_fmt(p_u)} control={d}",
                    )
                _emit(
                    cfg,
                    records,
                    rep,
                    f"pU={_fmt(p_u)};arm=control;r={r};d={d}",
                    degree,
                    quantifiers,
                    featurise,
                    control,
                    p_u,
                )
    return records


def _control_draw(cfg, pools, p_u, size, seed, ctx) -> Sample:
    """A class-conditional-preserving draw at the requested prevalence."""
    n_pos = round_half_up(p_u * size)
    n_neg = size - n_pos
    pos_a = round_half_up(2.0 * n_pos / 3.0)
    pos_b = n_pos - pos_a
    neg_a = round_half_up(n_neg / 3.0)
    neg_b = n_neg - neg_a
    parts = []
    for pool, prevalence, count, tag in (
        (pools.test_a, 1.0, pos_a, "posA"),
        (pools.test_b, 1.0, pos_b, "posB"),
        (pools.test_a, 0.0, neg_a, "negA"),
        (pools.test_b, 0.0, neg_b, "negB"),
    ):
        if count:
            parts.append(_draw(pool, prevalence, count, derive_seed(seed, tag), ctx))
    return merge_samples(parts)


def _star_allocation(size: int, stars: Sequence[int]) -> dict[int, int]:
    """Spread ``size`` across star values, remainder to the lowest stars."""
    base, rem = divmod(size, len(stars))
    return {s: base + (1 if i < rem else 0) for i, s in enumerate(sorted(stars))}


def _draw_stars(half: "_StarHalf", allocation: dict[int, int], seed: int, ctx: str) -> StarDataset:
    rng = np.random.default_rng(seed)
    chosen = []
    for s in sorted(allocation):
        want = allocation[s]
        if want == 0:
            continue
        available = half.by_star[s]
        if want > len(available):
            raise PoolExhaustionError(f"{s}-star [{ctx}]", want, len(available))
        chosen.append(rng.choice(available, want, replace=False))
    idx = np.concatenate(chosen)
    rng.shuffle(idx)
    return half.dataset.take(idx)


def _forced_allocation(size: int, prevalence: float, cut: float) -> dict[int, int]:
    """Star allocation hitting a forced binary prevalence at this cut point."""
    pos_stars = [s for s in (1, 2, 3, 4, 5) if s > cut]
    neg_stars = [s for s in (1, 2, 3, 4, 5) if s < cut]
    n_pos = round_half_up(prevalence * size)
    alloc = _star_allocation(n_pos, pos_stars)
    alloc.update(_star_allocation(size - n_pos, neg_stars))
    return alloc


def _concept_repetition(cfg, pools, rep, dry) -> list[ExperimentRecord]:
    records: list[ExperimentRecord] = []
    train_half = test_half = None
    if not dry:
        train_half = _make_half(pools.dataset, pools.train_indices)
        test_half = _make_half(pools.dataset, pools.test_indices)
    forced = cfg.concept_force_prevalence
    for i_cl, c_l in enumerate(cfg.concept_cut_points):
        quantifiers = featurise = None
        if not dry:
            alloc = (
                _forced_allocation(cfg.train_size, forced[0], c_l)
                if forced
                else _star_allocation(cfg.train_size, (1, 2, 3, 4, 5))
            )
            stars = _draw_stars(
                train_half,
                alloc,
                derive_seed(cfg.master_seed, CONCEPT, rep, "train", i_cl),
                f"concept rep={rep} cL={_fmt(c_l)}",
            )
            binary = binarise_dataset(stars, c_l)
            train = Sample(binary.x, binary.labels)
            quantifiers, featurise = _fit_methods(
                cfg, train, derive_seed(cfg.master_seed, CONCEPT, rep, "fit", i_cl)
            )
        for r in range(cfg.samples_per_config):
            for i_cu, c_u in enumerate(cfg.concept_cut_points):
                sample = None
                nominal = forced[1] if forced else _uniform_star_prevalence(c_u)
                if not dry:
                    alloc = (
                        _forced_allocation(cfg.test_size, forced[1], c_u)
                        if forced
                        else _star_allocation(cfg.test_size, (1, 2, 3, 4, 5))
                    )
                    stars = _draw_stars(
                        test_half,
                        alloc,
                        derive_seed(cfg.master_seed, CONCEPT, rep, "test", i_cl, r, i_cu),
                        f"concept rep={rep} cL={_fmt(c_l)} cU={_fmt(c_u)} round={r}",
                    )
                    binary = binarise_dataset(stars, c_u)
                    sample = Sample(binary.x, binary.labels)
                _emit(
                    cfg,
                    records,
                    rep,
                    f"cL={_fmt(c_l)};cU={_fmt(c_u)};r={r}",
                    _round_degree(c_l - c_u, 0),
                    quantifiers,
                    featurise,
                    sample,
                    nominal,
                )
    return records


def _uniform_star_prevalence(cut: float) -> float:
    return len([s for s in (1, 2, 3, 4, 5) if s > cut]) / 5.0


def _make_half(dataset: StarDataset, indices: np.ndarray) -> _StarHalf:
    subset = dataset.take(indices)
    return _StarHalf(dataset=subset, by_star=_index_by_star(subset))


_REPETITION_RUNNERS: dict[str, Callable] = {
    PRIOR: _prior_repetition,
    GLOBAL_COVARIATE: _global_covariate_repetition,
    LOCAL_COVARIATE: _local_covariate_repetition,
    CONCEPT: _concept_repetition,
}


def _repetition_worker(args):
    cfg, pools, rep, dry = args
    return _REPETITION_RUNNERS[cfg.protocol](cfg, pools, rep, dry)


def run_protocol(
    cfg: ProtocolConfig,
    dataset=None,
    dry_run: bool = False,
    jobs: int = 1,
) -> list[ExperimentRecord]:
    """Run one protocol end to end and return its record stream.

    ``dry_run`` walks the full loop structure without touching data, fitting
    or sampling, emitting stub estimates; it is how record-count identities
    are checked cheaply.  With ``jobs`` > 1 repetitions run in separate
    processes; the stream is merged in repetition order, so the output is
    identical for any worker count.
    """
    pools = None
    if not dry_run:
        if dataset is None:
            raise ValueError("a dataset is required unless dry_run=True")
        pools = _prepare_pools(cfg, dataset)
    reps = list(range(cfg.repetitions))
    if jobs <= 1 or len(reps) == 1:
        chunks = [_repetition_worker((cfg, pools, rep, dry_run)) for rep in reps]
    else:
        with ProcessPoolExecutor(max_workers=jobs) as pool:
            chunks = list(pool.map(_repetition_worker, [(cfg, pools, rep, dry_run) for rep in reps]))
    return [rec for chunk in chunks for rec in chunk]
