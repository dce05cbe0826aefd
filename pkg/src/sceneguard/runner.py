"""
Experiment Runner for SceneGuard
Executes the batch recipes over a corpus: protect, evaluate, robustness,
ablations and the zero-shot comparison
"""
import logging
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Callable, Dict, List, Optional, Sequence, Tuple

import numpy as np
from tqdm import tqdm

from sceneguard.audio_core import Waveform, fit_length, read_wav, to_canonical, write_wav
from sceneguard.config import ExperimentConfig, OptimConfig
from sceneguard.countermeasures import run_robustness_matrix
from sceneguard.encoder import EncoderBackend, MelStatsEncoder, cosine_similarity, make_backend
from sceneguard.errors import ConfigurationError, SceneGuardError
from sceneguard.metrics import (
    METRIC_NAMES, MetricReport, SampleMetrics, Transcript, attack_success_rate, check_defense_goal,
    mask_smoothness, mcd, read_transcripts, run_asr_hook, stoi, wer
)
from sceneguard.monitoring import PerformanceTracker
from sceneguard.noise_library import NoiseLibrary, baseline_noise, load_library, read_manifest, sample_noise
from sceneguard.optimizer import ProtectionResult, protect, protect_direct
from sceneguard.reports import build_report, flatten_ci, write_csv, write_json, write_timing
from sceneguard.stats import bootstrap_ci, make_rng, permutation_test, permutation_test_paired

logger = logging.getLogger(__name__)

ALL_METRICS = ("sim", "stoi", "mcd", "wer")
BASELINE_KINDS = ("uniform", "gaussian")
CLEAN_REFERENCE = {'sim': 1.0, 'stoi': 1.0, 'mcd': 0.0}

PROTECT_FIELDS = ['utterance_id', 'scene', 'status', 'sim', 'snr_db', 'worst_case_snr_db',
                  'gamma', 'epochs', 'error']
SAMPLE_FIELDS = ['utterance_id', 'status', 'sim', 'stoi', 'mcd', 'wer', 'pesq', 'error']


@dataclass(frozen=True)
class Utterance:
    utterance_id: str
    wav_path: Path
    scene: str
    transcript_path: Optional[Path] = None


def _resolve(manifest: Path, value: str) -> Path:
    path = Path(str(value).strip())
    return path if path.is_absolute() else manifest.parent / path


def load_corpus(manifest) -> List[Utterance]:
    """Corpus manifest rows `utterance_id,wav_path,scene[,transcript_path]`"""
    manifest = Path(manifest)
    utterances: List[Utterance] = []
    seen = set()
    for row in read_manifest(manifest, ("utterance_id", "wav_path", "scene")):
        utt_id = str(row["utterance_id"]).strip()
        if utt_id in seen:
            raise ConfigurationError(f"Duplicate utterance_id '{utt_id}' in {manifest}")
        seen.add(utt_id)
        transcript = str(row.get("transcript_path") or "").strip()
        utterances.append(Utterance(
            utterance_id=utt_id,
            wav_path=_resolve(manifest, row["wav_path"]),
            scene=str(row["scene"]).strip(),
            transcript_path=_resolve(manifest, transcript) if transcript else None,
        ))
    logger.info(f"Loaded corpus manifest {manifest}: {len(utterances)} utterances")
    return utterances


def load_references(utterances: Sequence[Utterance]) -> Dict[str, Transcript]:
    """Reference transcripts keyed by utterance id, from every transcript file the corpus names"""
    references: Dict[str, Transcript] = {}
    wanted = {u.utterance_id for u in utterances}
    for path in sorted({u.transcript_path for u in utterances if u.transcript_path is not None}):
        for utt_id, transcript in read_transcripts(path).items():
            if utt_id in wanted:
                references[utt_id] = transcript
    return references


def pair_files(clean_dir: Path, other_dir: Path) -> Tuple[List[Tuple[str, Path, Path]], List[str]]:
    """Match `<utterance_id>.wav` files; returns (pairs, ids missing a counterpart)"""
    clean_dir, other_dir = Path(clean_dir), Path(other_dir)
    if not clean_dir.is_dir():
        raise ConfigurationError(f"Not a directory: {clean_dir}")
    pairs, missing = [], []
    for clean_path in sorted(clean_dir.glob("*.wav")):
        counterpart = other_dir / clean_path.name
        if counterpart.exists():
            pairs.append((clean_path.stem, clean_path, counterpart))
        else:
            missing.append(clean_path.stem)
    if missing:
        logger.warning(f"{len(missing)} files in {clean_dir} have no counterpart in {other_dir}")
    return pairs, missing


# ---------------------------------------------------------------------------
# Per-utterance work (runs in worker processes)
# ---------------------------------------------------------------------------

@dataclass
class WorkerState:
    """Read-only context shipped once to each worker"""
    config: ExperimentConfig
    library: Optional[NoiseLibrary] = None
    references: Dict[str, Transcript] = field(default_factory=dict)
    hypotheses: Dict[str, Transcript] = field(default_factory=dict)
    _opt_backend: Optional[MelStatsEncoder] = field(default=None, repr=False)
    _eval_backend: Optional[EncoderBackend] = field(default=None, repr=False)

    def __getstate__(self):
        state = dict(self.__dict__)
        state['_opt_backend'] = None
        state['_eval_backend'] = None
        return state

    @property
    def opt_backend(self) -> MelStatsEncoder:
        if self._opt_backend is None:
            enc = self.config.encoder
            self._opt_backend = MelStatsEncoder(n_mels=enc.n_mels, fft_size=enc.fft_size, hop=enc.hop)
        return self._opt_backend

    @property
    def eval_backend(self) -> EncoderBackend:
        if self._eval_backend is None:
            self._eval_backend = make_backend(self.config.encoder)
        return self._eval_backend

    def require_library(self) -> NoiseLibrary:
        if self.library is None:
            raise ConfigurationError("This command needs noise_manifest in the experiment config")
        return self.library

    def wer_for(self, utt_id: str, processed: Waveform, use_hypothesis_file: bool) -> Optional[float]:
        reference = self.references.get(utt_id)
        if reference is None or not reference.tokens:
            return None
        if self.config.asr_cmd:
            hypothesis = run_asr_hook(self.config.asr_cmd, processed, utt_id)
        elif use_hypothesis_file and utt_id in self.hypotheses:
            hypothesis = self.hypotheses[utt_id]
        else:
            return None
        return wer(reference, hypothesis)

    def score(self, utt_id: str, clean: Waveform, processed: Waveform, metrics: Sequence[str],
              use_hypothesis_file: bool = False) -> Dict[str, Optional[float]]:
        processed = processed.with_samples(fit_length(processed.samples, len(clean)))
        out: Dict[str, Optional[float]] = {}
        if 'sim' in metrics:
            backend = self.eval_backend
            out['sim'] = cosine_similarity(backend.embed(clean), backend.embed(processed))
        if 'stoi' in metrics:
            out['stoi'] = stoi(clean, processed)
        if 'mcd' in metrics:
            out['mcd'] = mcd(clean, processed)
        if 'wer' in metrics:
            out['wer'] = self.wer_for(utt_id, processed, use_hypothesis_file)
        return out


_STATE: Optional[WorkerState] = None


def _init_worker(state: WorkerState) -> None:
    global _STATE
    _STATE = state


@dataclass(frozen=True)
class UtteranceTask:
    utterance: Utterance
    optim: OptimConfig
    method: str = "optimized"
    label: str = ""
    out_dir: Optional[Path] = None
    metrics: Tuple[str, ...] = ALL_METRICS


@dataclass(frozen=True)
class PairTask:
    utterance_id: str
    clean_path: Path
    processed_path: Path
    label: str = "evaluate"


@dataclass
class TaskOutcome:
    row: Dict[str, Any]
    elapsed_ms: float

    @property
    def ok(self) -> bool:
        return self.row.get('status') == 'ok'


def _write_outputs(out_dir: Path, utt_id: str, audio: Waveform, result: Optional[ProtectionResult]) -> None:
    (out_dir / "protected").mkdir(parents=True, exist_ok=True)
    write_wav(audio, out_dir / "protected" / f"{utt_id}.wav")
    if result is not None:
        write_json({'utterance_id': utt_id, **result.to_dict()}, out_dir / "traces" / f"{utt_id}.json")


def run_utterance(task: UtteranceTask) -> TaskOutcome:
    """Protect (or pass through) one utterance and score it; failures become error rows"""
    state = _STATE
    utt = task.utterance
    row: Dict[str, Any] = {'utterance_id': utt.utterance_id, 'label': task.label, 'method': task.method,
                           'scene': utt.scene, 'status': 'ok', 'error': None}
    start = time.perf_counter()
    try:
        speech = to_canonical(read_wav(utt.wav_path))
        rng = make_rng(task.optim.seed, utt.utterance_id)
        result: Optional[ProtectionResult] = None

        if task.method == "clean":
            processed = speech
        elif task.method in BASELINE_KINDS:
            result = protect_direct(speech, baseline_noise(task.method, len(speech), rng), task.optim, rng)
        else:
            clip = sample_noise(state.require_library(), utt.scene, rng)
            if task.method == "direct":
                result = protect_direct(speech, clip, task.optim, rng)
            else:
                result = protect(speech, clip, task.optim, rng, backend=state.opt_backend)

        if result is not None:
            processed = result.protected
            row.update({
                'gamma': result.final_gamma,
                'snr_db': result.final_snr_db,
                'worst_case_snr_db': result.worst_case_snr_db,
                'epochs': len(result.trace),
                'mask_smoothness': mask_smoothness(result.final_mask),
            })

        if task.out_dir is not None:
            _write_outputs(Path(task.out_dir), utt.utterance_id, processed, result)
        if task.metrics:
            row.update(state.score(utt.utterance_id, speech, processed, task.metrics))
    except Exception as e:
        logger.error(f"Utterance {utt.utterance_id} failed: {e}", exc_info=True)
        row['status'] = 'error'
        row['error'] = f"{type(e).__name__}: {e}"
    return TaskOutcome(row, (time.perf_counter() - start) * 1000.0)


def run_pair(task: PairTask) -> TaskOutcome:
    """Score one clean/processed file pair"""
    state = _STATE
    row: Dict[str, Any] = {'utterance_id': task.utterance_id, 'status': 'ok', 'error': None, 'pesq': None}
    start = time.perf_counter()
    try:
        clean = to_canonical(read_wav(task.clean_path))
        processed = to_canonical(read_wav(task.processed_path))
        row.update(state.score(task.utterance_id, clean, processed, ALL_METRICS, use_hypothesis_file=True))
    except Exception as e:
        logger.error(f"Pair {task.utterance_id} failed: {e}", exc_info=True)
        row['status'] = 'error'
        row['error'] = f"{type(e).__name__}: {e}"
    return TaskOutcome(row, (time.perf_counter() - start) * 1000.0)


# ---------------------------------------------------------------------------
# Runner
# ---------------------------------------------------------------------------

@dataclass
class CommandResult:
    report: Dict[str, Any]
    failures: int
    outputs: List[Path] = field(default_factory=list)

    @property
    def exit_code(self) -> int:
        return 0 if self.failures == 0 else 1


class ExperimentRunner:
    """Runs the batch recipes of one experiment configuration"""

    def __init__(self, config: ExperimentConfig, tracker: Optional[PerformanceTracker] = None,
                 show_progress: bool = True):
        """
        Args:
            config: Validated experiment configuration
            tracker: Wall-clock tracker feeding the report timing section
            show_progress: Render tqdm progress bars
        """
        self.config = config
        self.tracker = tracker or PerformanceTracker()
        self.show_progress = show_progress
        self.logger = logging.getLogger(__name__)
        self._state: Optional[WorkerState] = None

    @property
    def out_dir(self) -> Path:
        return Path(self.config.output_dir)

    # -- setup ---------------------------------------------------------------

    def _load_state(self, utterances: Sequence[Utterance], need_library: bool) -> WorkerState:
        if self._state is None:
            hypotheses = {}
            if self.config.hypothesis_transcripts is not None:
                hypotheses = read_transcripts(self.config.hypothesis_transcripts)
            self._state = WorkerState(self.config, references=load_references(utterances), hypotheses=hypotheses)
        if need_library and self._state.library is None and self.config.noise_manifest is not None:
            with self.tracker.track("load_noise_library"):
                self._state.library = load_library(self.config.noise_manifest, self.config.scene_labels,
                                                   self.config.seed)
        return self._state

    def _map(self, fn: Callable, tasks: Sequence, desc: str) -> List[TaskOutcome]:
        """Run tasks in manifest order; worker count never changes the results"""
        state = self._state
        jobs = min(self.config.worker_count, max(1, len(tasks)))
        bar = dict(total=len(tasks), desc=desc, disable=not self.show_progress, leave=False)

        if jobs == 1:
            _init_worker(state)
            outcomes = [fn(task) for task in tqdm(tasks, **bar)]
        else:
            with ProcessPoolExecutor(max_workers=jobs, initializer=_init_worker, initargs=(state,)) as pool:
                outcomes = list(tqdm(pool.map(fn, tasks), **bar))

        for task, outcome in zip(tasks, outcomes):
            self.tracker.record_operation(f"{desc}:{getattr(task, 'label', '') or desc}", outcome.elapsed_ms,
                                          outcome.ok, {'utterance_id': outcome.row['utterance_id']})
        failed = sum(not o.ok for o in outcomes)
        if failed:
            self.logger.warning(f"{desc}: {failed}/{len(outcomes)} items failed")
        return outcomes

    # -- statistics helpers --------------------------------------------------

    def _ci(self, values: Sequence[float], key: str) -> Optional[Dict[str, Any]]:
        values = [v for v in values if v is not None]
        if not values:
            return None
        if len(values) == 1:
            return {'point': float(values[0]), 'lo': None, 'hi': None,
                    'level': self.config.ci_level, 'iterations': 0}
        ci = bootstrap_ci(values, self.config.ci_level, self.config.bootstrap_iterations,
                          make_rng(self.config.seed, f"bootstrap:{key}"))
        return ci.to_dict()

    def _aggregate(self, rows: Sequence[Dict[str, Any]], metrics: Sequence[str], key: str) -> Dict[str, Any]:
        ok = [r for r in rows if r.get('status') == 'ok']
        return {m: self._ci([r.get(m) for r in ok], f"{key}:{m}") for m in metrics}

    def _versus_clean(self, values: Sequence[float], metric: str, key: str) -> Optional[Dict[str, Any]]:
        values = [v for v in values if v is not None]
        if not values:
            return None
        clean = [CLEAN_REFERENCE[metric]] * len(values)
        result = permutation_test(clean, values, self.config.permutation_iterations,
                                  make_rng(self.config.seed, f"permutation:{key}"))
        return result.to_dict()

    def _publish(self, command: str, stem: str, body: Dict[str, Any], rows: Sequence[Dict[str, Any]],
                 fieldnames: Optional[List[str]], out: Path, failures: int) -> CommandResult:
        report = build_report(command, self.config, body)
        paths = [write_json(report, out / f"{stem}_report.json"),
                 write_csv(rows, out / f"{stem}_summary.csv", fieldnames),
                 write_timing(command, self.tracker, out / "timing" / f"{stem}.json")]
        return CommandResult(report, failures, paths)

    @staticmethod
    def _ok_values(rows: Sequence[Dict[str, Any]], metric: str) -> List[float]:
        return [r[metric] for r in rows if r.get('status') == 'ok' and r.get(metric) is not None]

    # -- commands ------------------------------------------------------------

    def protect_corpus(self, out_dir: Optional[Path] = None) -> CommandResult:
        """Protect every utterance; writes WAVs, per-utterance traces and a summary"""
        out = Path(out_dir) if out_dir else self.out_dir
        utterances = load_corpus(self.config.corpus_manifest)
        self._load_state(utterances, need_library=True)

        tasks = [UtteranceTask(u, self.config.optim, "optimized", "protect", out, ("sim",)) for u in utterances]
        with self.tracker.track("protect_total", {'utterances': len(tasks)}):
            outcomes = self._map(run_utterance, tasks, "protect")

        rows = [o.row for o in outcomes]
        failures = sum(not o.ok for o in outcomes)
        self.logger.info(f"Protected {len(rows) - failures}/{len(rows)} utterances into {out}")
        body = {'rows': rows, 'n_utterances': len(rows), 'n_failed': failures}
        return self._publish("protect", "protect", body, rows, PROTECT_FIELDS, out, failures)

    def evaluate(self, clean_dir: Path, protected_dir: Path, out_dir: Optional[Path] = None) -> CommandResult:
        """SIM/STOI/MCD/WER of protected against clean files with CIs and tests against the clean row"""
        out = Path(out_dir) if out_dir else self.out_dir
        utterances = load_corpus(self.config.corpus_manifest)
        self._load_state(utterances, need_library=False)

        pairs, missing = pair_files(clean_dir, protected_dir)
        tasks = [PairTask(utt_id, c, p) for utt_id, c, p in pairs]
        outcomes = self._map(run_pair, tasks, "evaluate")
        rows = [o.row for o in outcomes]

        metric_report = MetricReport([
            SampleMetrics(**{k: r.get(k) for k in ('utterance_id', 'sim', 'stoi', 'mcd', 'wer', 'pesq')})
            for r in rows if r['status'] == 'ok'
        ])
        body = {
            'clean_dir': str(clean_dir),
            'protected_dir': str(protected_dir),
            'n_pairs': len(pairs),
            'missing': missing,
            'per_sample': rows,
            'aggregates': self._aggregate(rows, METRIC_NAMES, "evaluate"),
            'summary': metric_report.aggregates,
            'clean_row': dict(CLEAN_REFERENCE, wer=None, pesq=None),
            'tests': {m: self._versus_clean(metric_report.values(m).tolist(), m, f"evaluate:{m}")
                      for m in CLEAN_REFERENCE},
            'defense_goal': check_defense_goal(metric_report, self.config.criteria).to_dict(),
        }
        failures = sum(not o.ok for o in outcomes) + len(missing)
        return self._publish("evaluate", "evaluate", body, rows, SAMPLE_FIELDS, out, failures)

    def robustness(self, clean_dir: Path, protected_dir: Path, out_dir: Optional[Path] = None) -> CommandResult:
        """SIM, delta SIM, STOI and WER under every configured countermeasure"""
        out = Path(out_dir) if out_dir else self.out_dir
        utterances = load_corpus(self.config.corpus_manifest)
        state = self._load_state(utterances, need_library=False)

        pairs, missing = pair_files(clean_dir, protected_dir)
        ids: List[str] = []
        clean: List[Waveform] = []
        protected: List[Waveform] = []
        unreadable: List[Dict[str, Any]] = []
        for utt_id, clean_path, protected_path in pairs:
            try:
                c = to_canonical(read_wav(clean_path))
                p = to_canonical(read_wav(protected_path))
            except SceneGuardError as e:
                self.logger.error(f"Pair {utt_id} skipped: {e}", exc_info=True)
                unreadable.append({'utterance_id': utt_id, 'status': 'error', 'error': f"{type(e).__name__}: {e}"})
                continue
            ids.append(utt_id)
            clean.append(c)
            protected.append(p.with_samples(fit_length(p.samples, len(c))))

        scorers = {'stoi': lambda i, c, p: stoi(c, p)}
        if self.config.asr_cmd:
            scorers['wer'] = lambda i, c, p: state.wer_for(ids[i], p, use_hypothesis_file=False)

        with self.tracker.track("robustness_matrix", {'pairs': len(ids)}):
            rows = run_robustness_matrix(protected, clean, self.config.countermeasures,
                                         state.eval_backend, scorers, ids=ids)

        matrix = [row.to_dict() for row in rows]
        body = {'clean_dir': str(clean_dir), 'protected_dir': str(protected_dir),
                'n_pairs': len(pairs), 'missing': missing, 'unreadable': unreadable, 'matrix': matrix}
        fields = ['countermeasure', 'kind', 'sim_mean', 'delta_sim', 'stoi', 'wer', 'n', 'n_failed',
                  'skipped', 'reason']
        failures = len(missing) + len(unreadable) + sum(len(row.failed) for row in rows)
        return self._publish("robustness", "robustness", body, matrix, fields, out, failures)

    def ablate(self, mode: str, out_dir: Optional[Path] = None) -> CommandResult:
        """Run one ablation: snr_sweep, optimization, hyperparameter or baselines"""
        handlers = {
            'snr_sweep': self._ablate_snr,
            'optimization': self._ablate_optimization,
            'hyperparameter': self._ablate_hyperparameters,
            'baselines': self._ablate_baselines,
        }
        if mode not in handlers:
            raise ConfigurationError(f"Unknown ablation mode '{mode}'; choose from {sorted(handlers)}")

        out = Path(out_dir) if out_dir else self.out_dir
        utterances = load_corpus(self.config.corpus_manifest)
        self._load_state(utterances, need_library=True)

        body, rows, failures = handlers[mode](utterances)
        body['mode'] = mode
        return self._publish(f"ablate:{mode}", f"ablate_{mode}", body, rows, None, out, failures)

    def _run_arms(self, utterances: Sequence[Utterance],
                  arms: Sequence[Tuple[str, str, OptimConfig]]) -> Tuple[Dict[str, List[Dict[str, Any]]], int]:
        """arms: (label, method, optim); returns rows grouped by label"""
        tasks = [UtteranceTask(u, optim, method, label) for label, method, optim in arms for u in utterances]
        outcomes = self._map(run_utterance, tasks, "ablate")
        grouped: Dict[str, List[Dict[str, Any]]] = {label: [] for label, _, _ in arms}
        for outcome in outcomes:
            grouped[outcome.row['label']].append(outcome.row)
        return grouped, sum(not o.ok for o in outcomes)

    def _elapsed_ms(self, label: str) -> float:
        timing = self.tracker.operations.get(f"ablate:{label}")
        return timing.elapsed_ms if timing else 0.0

    def _arm_row(self, label: str, rows: Sequence[Dict[str, Any]], key: str) -> Dict[str, Any]:
        agg = self._aggregate(rows, ALL_METRICS, f"{key}:{label}")
        row: Dict[str, Any] = {'label': label, 'n': sum(r['status'] == 'ok' for r in rows)}
        for metric in ALL_METRICS:
            row.update(flatten_ci(metric, agg[metric]))
        smooth = self._ok_values(rows, 'mask_smoothness')
        row['mask_smoothness'] = float(np.mean(smooth)) if smooth else None
        return row

    def _ablate_snr(self, utterances):
        arms = []
        for lo, hi in self.config.ablation.snr_ranges:
            optim = OptimConfig(**{**self.config.optim.model_dump(), 'snr_min_db': lo, 'snr_max_db': hi})
            arms.append((f"[{lo:g},{hi:g}]", "optimized", optim))
        grouped, failures = self._run_arms(utterances, arms)

        rows = []
        for (label, _, optim) in arms:
            row = self._arm_row(label, grouped[label], "snr_sweep")
            row.update({'snr_min_db': optim.snr_min_db, 'snr_max_db': optim.snr_max_db})
            rows.append(row)
        return {'rows': rows, 'per_sample': grouped}, rows, failures

    def _ablate_optimization(self, utterances):
        arms = [("direct", "direct", self.config.optim), ("optimized", "optimized", self.config.optim)]
        grouped, failures = self._run_arms(utterances, arms)
        rows = [self._arm_row(label, grouped[label], "optimization") for label, _, _ in arms]

        direct = {r['utterance_id']: r['sim'] for r in grouped['direct'] if r['status'] == 'ok'}
        deltas = [r['sim'] - direct[r['utterance_id']] for r in grouped['optimized']
                  if r['status'] == 'ok' and r['utterance_id'] in direct]
        test = None
        if deltas:
            test = permutation_test_paired(deltas, self.config.permutation_iterations,
                                           make_rng(self.config.seed, "permutation:optimization")).to_dict()
        return {'rows': rows, 'per_sample': grouped, 'paired_test': test, 'n_pairs': len(deltas)}, rows, failures

    def _ablate_hyperparameters(self, utterances):
        base = self.config.optim
        grid = self.config.ablation
        settings = ([(lam, base.epochs) for lam in grid.lambda_grid]
                    + [(base.lambda_reg, epochs) for epochs in grid.epoch_grid])

        unique = list(dict.fromkeys(settings))
        arms = [(f"lambda_reg={lam:g},epochs={epochs}", "optimized",
                 OptimConfig(**{**base.model_dump(), 'lambda_reg': lam, 'epochs': epochs}))
                for lam, epochs in unique]
        before = {label: self._elapsed_ms(label) for label, _, _ in arms}
        grouped, failures = self._run_arms(utterances, arms)
        # sum of per-utterance times, not pool elapsed time
        wall_clock = {label: round((self._elapsed_ms(label) - before[label]) / 1000.0, 6) for label, _, _ in arms}

        rows = []
        for sweep, (lam, epochs) in zip(["lambda_reg"] * len(grid.lambda_grid) + ["epochs"] * len(grid.epoch_grid),
                                        settings):
            label = f"lambda_reg={lam:g},epochs={epochs}"
            row = self._arm_row(label, grouped[label], "hyperparameter")
            row.update({'sweep': sweep, 'lambda_reg': lam, 'epochs': epochs, 'wall_clock_s': wall_clock[label]})
            rows.append(row)
        body = {'rows': rows, 'per_sample': grouped,
                'wall_clock': {'per_arm_s': wall_clock, 'total_s': round(sum(wall_clock.values()), 6)}}
        return body, rows, failures

    def _ablate_baselines(self, utterances):
        optim = self.config.optim
        arms = [("clean", "clean", optim), ("random_noise", "uniform", optim),
                ("gaussian_noise", "gaussian", optim), ("sceneguard", "optimized", optim)]
        grouped, failures = self._run_arms(utterances, arms)

        clean_sims = self._ok_values(grouped['clean'], 'sim')
        rows = []
        for label, _, _ in arms:
            row = self._arm_row(label, grouped[label], "baselines")
            sims = self._ok_values(grouped[label], 'sim')
            test = {}
            if label != "clean" and sims and clean_sims:
                test = permutation_test(clean_sims, sims, self.config.permutation_iterations,
                                        make_rng(self.config.seed, f"permutation:baselines:{label}")).to_dict()
            row.update({'p_value': test.get('p_value'), 'cohens_d': test.get('cohens_d'),
                        'p_value_normal': test.get('p_value_normal')})
            rows.append(row)
        return {'rows': rows, 'per_sample': grouped}, rows, failures

    def zeroshot(self, reference_dir: Path, clean_synth_dir: Path, defended_synth_dir: Path,
                 out_dir: Optional[Path] = None) -> CommandResult:
        """
        Score zero-shot clones made from clean and from defended references

        Each `<id>.wav` in reference_dir is compared with the clone of the same
        name synthesized from the clean reference and from the defended one.
        """
        out = Path(out_dir) if out_dir else self.out_dir
        utterances = load_corpus(self.config.corpus_manifest)
        backend = self._load_state(utterances, need_library=False).eval_backend

        clean_pairs, missing_clean = pair_files(reference_dir, clean_synth_dir)
        defended = {utt_id: path for utt_id, _, path in pair_files(reference_dir, defended_synth_dir)[0]}

        rows = []
        for utt_id, ref_path, clean_path in tqdm(clean_pairs, desc="zeroshot", disable=not self.show_progress,
                                                 leave=False):
            row: Dict[str, Any] = {'utterance_id': utt_id, 'status': 'ok', 'error': None}
            if utt_id not in defended:
                row.update(status='error', error='missing defended synthesis')
                rows.append(row)
                continue
            try:
                with self.tracker.track("zeroshot", {'utterance_id': utt_id}):
                    target = backend.embed(to_canonical(read_wav(ref_path)))
                    row['sim_clean_reference'] = cosine_similarity(target, backend.embed(to_canonical(read_wav(clean_path))))
                    row['sim_defended_reference'] = cosine_similarity(
                        target, backend.embed(to_canonical(read_wav(defended[utt_id]))))
            except Exception as e:
                self.logger.error(f"Zero-shot scoring failed for {utt_id}: {e}", exc_info=True)
                row.update(status='error', error=f"{type(e).__name__}: {e}")
            rows.append(row)

        summary: Dict[str, Any] = {}
        for key in ("clean_reference", "defended_reference"):
            sims = self._ok_values(rows, f"sim_{key}")
            summary[key] = {
                'sim': self._ci(sims, f"zeroshot:{key}"),
                'attack_success_rate': attack_success_rate(sims) if sims else None,
            }
        deltas = [r['sim_clean_reference'] - r['sim_defended_reference'] for r in rows if r['status'] == 'ok']
        reduction = None
        if deltas:
            clean_summary, defended_summary = summary['clean_reference'], summary['defended_reference']
            reduction = {
                'sim': clean_summary['sim']['point'] - defended_summary['sim']['point'],
                'attack_success_rate': clean_summary['attack_success_rate'] - defended_summary['attack_success_rate'],
                'paired_test': permutation_test_paired(deltas, self.config.permutation_iterations,
                                                       make_rng(self.config.seed, "permutation:zeroshot")).to_dict(),
            }

        failures = sum(r['status'] != 'ok' for r in rows) + len(missing_clean)
        body = {'per_sample': rows, 'missing': missing_clean, 'summary': summary, 'reduction': reduction}
        fields = ['utterance_id', 'status', 'sim_clean_reference', 'sim_defended_reference', 'error']
        return self._publish("zeroshot", "zeroshot", body, rows, fields, out, failures)
