"""Survey ingestion, site aggregation, disturbance detection and trajectory segmentation.

Survey CSV columns: ``reef,site,transect,date,group,cover_percent`` with ISO-8601
dates.  Raw group labels are mapped to model groups through a taxonomy table.
"""
from __future__ import annotations

import csv
import datetime as dt
import io
import logging
from collections import defaultdict
from dataclasses import dataclass, field
from typing import Iterable, TextIO

import numpy as np
from scipy import stats

from .growth import GroupParams, GrowthParams, InitialState, solve
from .likelihood import MODEL_GROUPS, Trajectory

log = logging.getLogger(__name__)

SURVEY_COLUMNS = ("reef", "site", "transect", "date", "group", "cover_percent")
ACRO, OTHER_HARD, HARD = "Acroporidae", "other-hard-coral", "hard-coral"
ABIOTIC, SILT, OTHER = "abiotic", "silt", "other"
MODEL_LABELS = (ACRO, OTHER_HARD, ABIOTIC, SILT, OTHER)
SERIES_GROUPS = (HARD, ACRO, OTHER_HARD, ABIOTIC, SILT)
COVER_SUM_TOLERANCE = 0.5
DESIGN_TRANSECTS = 5
EPOCH = dt.date(1970, 1, 1)

DEFAULT_TAXONOMY = {
    "acroporidae": ACRO,
    "acropora": ACRO,
    "other-hard-coral": OTHER_HARD,
    "other hard coral": OTHER_HARD,
    "other hard corals": OTHER_HARD,
    "abiotic": ABIOTIC,
    "sand": ABIOTIC,
    "rock": ABIOTIC,
    "rubble": ABIOTIC,
    "silt": SILT,
    "other": OTHER,
}


class SurveyFormatError(ValueError):
    pass


def to_decimal_year(date: dt.date) -> float:
    return 1970.0 + (date - EPOCH).days / 365.25


def from_decimal_year(t: float) -> dt.date:
    return EPOCH + dt.timedelta(days=int(round((t - 1970.0) * 365.25)))


@dataclass(frozen=True)
class TransectRecord:
    reef: str
    site: str
    transect: str
    date: dt.date
    group: str
    cover: float
    raw_label: str = ""

    @property
    def site_key(self) -> tuple[str, str]:
        return (self.reef, self.site)


def read_taxonomy(stream: TextIO) -> dict[str, str]:
    """Taxonomy CSV with columns ``raw_label,model_group``."""
    table = {}
    for row in csv.DictReader(_data_lines(stream)):
        group = row["model_group"].strip()
        if group not in MODEL_LABELS:
            raise SurveyFormatError(f"unknown model group {group!r} in taxonomy")
        table[row["raw_label"].strip().lower()] = group
    return table


def _data_lines(stream: TextIO):
    for line in stream:
        yield line if not line.startswith("#") else "\n"


def parse_survey(stream: TextIO, taxonomy: dict[str, str] | None = None,
                 rejected: list | None = None) -> list[TransectRecord]:
    """Validated transect records.

    Rows with cover outside [0, 100] are skipped and appended to ``rejected`` as
    ``(line_number, reason)``; structurally malformed rows raise SurveyFormatError.
    """
    taxonomy = DEFAULT_TAXONOMY if taxonomy is None else {k.lower(): v for k, v in taxonomy.items()}
    reader = csv.reader(_data_lines(stream))
    records: list[TransectRecord] = []
    header = None
    n_rejected = 0
    unknown = set()
    for row in reader:
        line = reader.line_num
        if not row or all(not c.strip() for c in row):
            continue
        if header is None:
            header = [c.strip() for c in row]
            missing = [c for c in SURVEY_COLUMNS if c not in header]
            if missing:
                raise SurveyFormatError(f"line {line}: missing columns {missing}")
            idx = {c: header.index(c) for c in SURVEY_COLUMNS}
            continue
        if len(row) != len(header):
            raise SurveyFormatError(f"line {line}: expected {len(header)} fields, got {len(row)}")
        try:
            date = dt.date.fromisoformat(row[idx["date"]].strip())
            cover = float(row[idx["cover_percent"]])
        except ValueError as exc:
            raise SurveyFormatError(f"line {line}: {exc}") from exc
        if not (0.0 <= cover <= 100.0):
            n_rejected += 1
            log.warning("line %d: cover %s outside [0, 100], row rejected", line, cover)
            if rejected is not None:
                rejected.append((line, f"cover {cover} outside [0, 100]"))
            continue
        raw = row[idx["group"]].strip()
        group = taxonomy.get(raw.lower())
        if group is None:
            unknown.add(raw)
            group = OTHER
        records.append(TransectRecord(
            row[idx["reef"]].strip(), row[idx["site"]].strip(), row[idx["transect"]].strip(),
            date, group, cover, raw,
        ))
    if header is None:
        log.warning("survey input is empty")
    if unknown:
        log.warning("unmapped taxon labels treated as %r: %s", OTHER, sorted(unknown))

    totals = defaultdict(float)
    for r in records:
        totals[(r.reef, r.site, r.transect, r.date)] += r.cover
    for key, total in totals.items():
        if total > 100.0 + COVER_SUM_TOLERANCE:
            raise SurveyFormatError(f"covers for {key} sum to {total:.3f} > 100")
    return records


def write_survey(records: Iterable[TransectRecord], stream: TextIO, header_comment: str | None = None):
    if header_comment:
        stream.write(f"# {header_comment}\n")
    w = csv.writer(stream, lineterminator="\n")
    w.writerow(SURVEY_COLUMNS)
    for r in records:
        w.writerow([r.reef, r.site, r.transect, r.date.isoformat(), r.raw_label or r.group,
                    repr(float(r.cover))])


@dataclass
class SiteSeries:
    """Per-visit transect means and variance of the mean for one site."""

    reef: str
    site: str
    dates: list[dt.date]
    times: np.ndarray
    groups: tuple[str, ...]
    mean: np.ndarray  # (visit, group)
    var_mean: np.ndarray  # (visit, group), sample variance / transect count
    n_transects: np.ndarray
    transects: list[dict[str, dict[str, float]]] = field(repr=False)  # visit -> id -> group -> cover
    present_groups: frozenset = frozenset()

    @property
    def key(self) -> tuple[str, str]:
        return (self.reef, self.site)

    @property
    def flagged(self) -> np.ndarray:
        """Visits with fewer transects than the survey design."""
        return self.n_transects < DESIGN_TRANSECTS

    def column(self, group: str) -> int:
        return self.groups.index(group)


def aggregate(records: Iterable[TransectRecord]) -> dict[tuple[str, str], SiteSeries]:
    """Group records by site and visit; mean and variance of the mean over transects."""
    by_site = defaultdict(lambda: defaultdict(lambda: defaultdict(lambda: defaultdict(float))))
    present = defaultdict(set)
    for r in records:
        by_site[r.site_key][r.date][r.transect][r.group] += r.cover
        present[r.site_key].add(r.group)

    out = {}
    for key in sorted(by_site):
        visits = by_site[key]
        dates = sorted(visits)
        mean = np.zeros((len(dates), len(SERIES_GROUPS)))
        var = np.zeros_like(mean)
        counts = np.zeros(len(dates), dtype=int)
        detail = []
        for i, date in enumerate(dates):
            tr = visits[date]
            if len(tr) < 2:
                raise ValueError(f"site {key} on {date}: at least 2 transects are required")
            ids = sorted(tr)
            table = {}
            for tid in ids:
                covers = {g: tr[tid].get(g, 0.0) for g in (ACRO, OTHER_HARD, ABIOTIC, SILT)}
                covers[HARD] = covers[ACRO] + covers[OTHER_HARD]
                table[tid] = covers
            vals = np.array([[table[t][g] for g in SERIES_GROUPS] for t in ids])
            counts[i] = len(ids)
            mean[i] = vals.mean(axis=0)
            var[i] = vals.var(axis=0, ddof=1) / len(ids)
            detail.append(table)
            if len(ids) < DESIGN_TRANSECTS:
                log.info("site %s on %s: %d transects present", key, date, len(ids))
        out[key] = SiteSeries(
            key[0], key[1], dates, np.array([to_decimal_year(d) for d in dates]),
            SERIES_GROUPS, mean, var, counts, detail, frozenset(present[key]),
        )
    return out


@dataclass(frozen=True)
class DisturbanceEvent:
    site_key: tuple[str, str]
    visit: int
    p_value: float
    t_stat: float = float("nan")


@dataclass(frozen=True)
class PairedTest:
    visit: int  # later visit of the pair
    n_pairs: int
    t_stat: float
    p_value: float


def paired_decline_tests(series: SiteSeries, group: str = HARD) -> list[PairedTest]:
    """One-sided paired t-test (H1: decline) for every pair of consecutive visits."""
    out = []
    for i in range(1, len(series.dates)):
        before, after = series.transects[i - 1], series.transects[i]
        shared = sorted(set(before) & set(after))
        dropped = set(before) ^ set(after)
        if dropped:
            log.warning("site %s visit %d: unmatched transects %s dropped", series.key, i, sorted(dropped))
        if len(shared) < 2:
            log.warning("site %s visit %d: fewer than 2 paired transects", series.key, i)
            continue
        diff = np.array([after[t][group] - before[t][group] for t in shared])
        n = diff.size
        sd = diff.std(ddof=1)
        mean = diff.mean()
        if sd == 0:
            if mean == 0:
                log.warning("site %s visit %d: all paired differences are zero", series.key, i)
                continue
            t_stat = np.copysign(np.inf, mean)
            p = 0.0 if mean < 0 else 1.0
        else:
            t_stat = mean / (sd / np.sqrt(n))
            p = float(stats.t.cdf(t_stat, n - 1))
        out.append(PairedTest(i, n, float(t_stat), p))
    return out


def detect_disturbances(series: SiteSeries, p_threshold: float = 0.05) -> list[DisturbanceEvent]:
    return [
        DisturbanceEvent(series.key, test.visit, test.p_value, test.t_stat)
        for test in paired_decline_tests(series)
        if test.p_value <= p_threshold
    ]


def visit_spans(n_visits: int, event_visits: Iterable[int], min_post_visits: int = 3):
    """(start, end) visit index pairs, inclusive, one per kept trajectory."""
    if min_post_visits < 2:
        raise ValueError("a trajectory needs at least 2 visits after its start")
    starts = sorted(set(event_visits))
    spans = []
    for k, start in enumerate(starts):
        end = starts[k + 1] - 1 if k + 1 < len(starts) else n_visits - 1
        if end - start >= min_post_visits:
            spans.append((start, end))
    return spans


def segment(series: SiteSeries, events: Iterable[DisturbanceEvent], K: float,
            min_post_visits: int = 3) -> list[Trajectory]:
    """Recovery trajectories: each starts at a disturbance visit and runs to the
    visit before the next disturbance."""
    visits = [e.visit for e in events if e.site_key == series.key]
    groups = (HARD, ACRO, OTHER_HARD)
    cols = [series.column(g) for g in groups]
    out = []
    for start, end in visit_spans(len(series.dates), visits, min_post_visits):
        sl = slice(start, end + 1)
        out.append(Trajectory(
            id=f"{series.reef}/{series.site}/{series.dates[start].isoformat()}",
            times=series.times[sl],
            obs=np.clip(series.mean[sl][:, cols], 0.0, 100.0),
            stderr_var=series.var_mean[sl][:, cols],
            K=K,
            groups=groups,
            reef=series.reef,
            site=series.site,
            meta={
                "visits": [start, end],
                "dates": [d.isoformat() for d in series.dates[sl]],
                "n_transects": series.n_transects[sl].tolist(),
            },
        ))
    return out


def estimate_K(abiotic=None, silt_flags=None, override: float | None = None) -> float:
    """Carrying capacity as 100 minus the median abiotic cover over unflagged visits.

    An explicit override always wins.
    """
    if override is not None:
        if not (0 < override <= 100):
            raise ValueError(f"K override must lie in (0, 100], got {override}")
        return float(override)
    if abiotic is None or len(abiotic) == 0:
        raise ValueError("no abiotic cover available: supply K through the site metadata")
    abiotic = np.asarray(abiotic, dtype=float)
    flags = np.zeros(abiotic.size, bool) if silt_flags is None else np.asarray(silt_flags, bool)
    kept = abiotic[~flags]
    if kept.size == 0:
        raise ValueError("every visit is silt-flagged: supply K through the site metadata")
    K = 100.0 - float(np.median(kept))
    if K <= 0:
        raise ValueError(f"abiotic cover leaves no space for coral (K = {K})")
    return K


def site_K(series: SiteSeries, override: float | None = None, silt_threshold: float = 0.0) -> float:
    """K for a site; visits whose mean silt cover exceeds ``silt_threshold`` are excluded."""
    if override is not None:
        return estimate_K(override=override)
    if ABIOTIC not in series.present_groups:
        raise ValueError(f"site {series.key}: no abiotic records, supply K through the site metadata")
    abiotic = series.mean[:, series.column(ABIOTIC)]
    silt = series.mean[:, series.column(SILT)] > silt_threshold
    return estimate_K(abiotic, silt)


def read_site_metadata(stream: TextIO) -> dict[tuple[str, str], float]:
    """Site metadata CSV ``reef,site,K_override``; blank overrides are ignored."""
    out = {}
    for row in csv.DictReader(_data_lines(stream)):
        value = (row.get("K_override") or "").strip()
        if value:
            out[(row["reef"].strip(), row["site"].strip())] = float(value)
    return out


def generate_synthetic(
    params: GrowthParams,
    init: InitialState,
    times,
    noise_sd,
    rng: np.random.Generator,
    traj_id: str = "synthetic",
    exact_initial: bool = True,
    n_transects: int = DESIGN_TRANSECTS,
    **solver_kw,
) -> Trajectory:
    """Model solution plus Gaussian observation noise with standard deviation ``noise_sd``.

    ``noise_sd`` is the standard error of the transect mean (scalar, per time, or
    per time and group).  With ``exact_initial`` the disturbance visit records the
    initial cover without noise, matching its role as the known initial condition.
    """
    times = np.asarray(times, dtype=float)
    sol = solve(params, init, times, **solver_kw)
    sd = np.broadcast_to(np.asarray(noise_sd, dtype=float).reshape(
        (-1, 1) if np.ndim(noise_sd) == 1 else np.shape(noise_sd)), sol.cover.shape)
    obs = sol.cover + sd * rng.standard_normal(sol.cover.shape)
    if exact_initial:
        obs[0] = init.c0
    obs = np.clip(obs, 0.0, 100.0)
    return Trajectory(
        traj_id, times, obs, sd**2, params.K, MODEL_GROUPS[params.M],
        meta={"transect_sd": (sd * np.sqrt(n_transects)).tolist(), "n_transects": n_transects,
              "truth": params.as_vector().tolist()},
    )


def _site_params(ep: dict, M: int, K: float) -> GrowthParams:
    groups = ep["params"] if isinstance(ep["params"], list) else [ep["params"]]
    if len(groups) != M:
        raise ValueError(f"episode has {len(groups)} parameter groups for model {M}")
    return GrowthParams(
        tuple(GroupParams(**g) if isinstance(g, dict) else GroupParams(*g) for g in groups), K)


def simulate_survey(spec: dict, rng: np.random.Generator) -> list[TransectRecord]:
    """Transect-level survey records for synthetic sites (see README for the schema).

    Each site has a pre-disturbance visit followed by recovery episodes; every
    episode opens with a disturbance visit at cover ``c0`` and is surveyed annually.
    """
    records = []
    for site in spec["sites"]:
        reef, name = str(site["reef"]), str(site["site"])
        M = int(site.get("model", 1))
        K = float(site["K"])
        n_tr = int(site.get("n_transects", DESIGN_TRANSECTS))
        tr_sd = float(site.get("transect_sd", 2.0))
        ab_sd = float(site.get("abiotic_sd", 1.0))
        frac = float(site.get("acro_fraction", 0.5))
        t = float(site.get("start_year", 2000.0))
        pre = np.atleast_1d(np.asarray(site.get("pre_cover", 0.6 * K), dtype=float))

        visits = [(t, pre)]
        t += 1.0
        for ep in site["episodes"]:
            params = _site_params(ep, M, K)
            n_post = int(ep["visits"])
            times = t + np.arange(n_post + 1, dtype=float)
            sol = solve(params, InitialState(t, ep["c0"]), times)
            visits += list(zip(times, sol.cover))
            t = times[-1] + 1.0

        for t_visit, cover in visits:
            date = from_decimal_year(t_visit)
            cover = np.atleast_1d(cover)
            for j in range(n_tr):
                noisy = np.maximum(cover + tr_sd * rng.standard_normal(cover.size), 0.0)
                if M == 1 and noisy.size == 1:
                    acro, other = frac * noisy[0], (1.0 - frac) * noisy[0]
                else:
                    acro, other = noisy[0], noisy[1]
                hard = acro + other
                if hard > 100.0:
                    acro, other = 100.0 * acro / hard, 100.0 * other / hard
                    hard = 100.0
                abiotic = float(np.clip(100.0 - K + ab_sd * rng.standard_normal(), 0.0, 100.0 - hard))
                rest = max(100.0 - hard - abiotic, 0.0)
                tid = f"T{j + 1}"
                for label, value in ((ACRO, acro), (OTHER_HARD, other), (ABIOTIC, abiotic), (OTHER, rest)):
                    records.append(TransectRecord(reef, name, tid, date, label, round(float(value), 6), label))
    return records


def records_to_csv(records, header_comment: str | None = None) -> str:
    buf = io.StringIO()
    write_survey(records, buf, header_comment)
    return buf.getvalue()
