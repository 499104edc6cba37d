"""The gated ideate -> generate -> critique loop, with persistence and resume.

Every step writes its artifact atomically and then appends an event to
``trace.json``. ``resume`` replays the recorded steps from disk (verifying
artifact digests) and continues live from the first step the trace lacks,
so completed model calls are never repeated.
"""

from __future__ import annotations

import hashlib
import json
import logging
import time
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Callable, Literal

from filelock import FileLock, Timeout

from .critique import CritiqueAgent
from .errors import (
    CollageError,
    CorruptInput,
    CorruptRun,
    FatalError,
    IoError,
    MalformedPlan,
    ParseError,
    PreconditionError,
    ProviderError,
    SchemaError,
)
from .generation import GenerationAgent
from .ideation import IdeationAgent, require_valid
from .persist import atomic_write_bytes, atomic_write_json, atomic_write_text
from .plan_model import (
    CritiqueReport,
    GateConfig,
    GridLayout,
    PipelineState,
    ProductInput,
    load_image,
    parse_plan_json,
    serialize,
)
from .providers.base import ChatProvider, EmbeddingProvider, ImageProvider, encode_png
from .providers.mock import MockChat, MockEmbedder, MockImageGenerator, ScriptedChat
from .reference import ReferenceAgent
from .templates import DEFAULT_LIBRARY, PromptLibrary

log = logging.getLogger(__name__)

EVENT_KINDS = (
    "reference", "stage1", "stage2", "stage3", "generate",
    "gate1", "gate2", "revision", "refinement", "stop",
)
STOP_REASONS = ("gates_passed", "budget_exhausted", "fatal_error")
TRACE_FILE = "trace.json"
LOCK_FILE = ".run.lock"
INPUT_FILE = "input.json"


@dataclass(frozen=True)
class PipelineConfig:
    run_dir: Path
    max_iterations: int = 3
    gates: GateConfig = field(default_factory=GateConfig)
    layout: GridLayout = field(default_factory=lambda: GridLayout.of(2, 2))
    mode: Literal["creation", "reference"] = "creation"
    return_policy: Literal["best", "last"] = "best"
    normalize_timestamps: bool = False

    def check(self) -> None:
        if not isinstance(self.max_iterations, int) or self.max_iterations < 1:
            raise PreconditionError("max_iterations must be >= 1")
        if self.mode not in ("creation", "reference"):
            raise PreconditionError(f"unknown mode {self.mode!r}")
        if self.return_policy not in ("best", "last"):
            raise PreconditionError(f"unknown return policy {self.return_policy!r}")
        require_valid(self.gates, "gate config")
        require_valid(self.layout, "layout")


@dataclass(frozen=True)
class TraceEvent:
    seq: int
    timestamp: float
    kind: str
    iteration: int
    payload_digest: str
    detail: dict = field(default_factory=dict)

    def to_dict(self) -> dict:
        return {
            "seq": self.seq,
            "timestamp": self.timestamp,
            "kind": self.kind,
            "iteration": self.iteration,
            "payload_digest": self.payload_digest,
            "detail": self.detail,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "TraceEvent":
        return cls(int(d["seq"]), float(d["timestamp"]), str(d["kind"]), int(d["iteration"]),
                   str(d["payload_digest"]), dict(d.get("detail") or {}))


@dataclass
class RunTrace:
    events: list[TraceEvent] = field(default_factory=list)

    @property
    def stop_reason(self) -> str | None:
        if self.events and self.events[-1].kind == "stop":
            return self.events[-1].detail.get("reason")
        return None

    def count(self, kind: str) -> int:
        return sum(1 for e in self.events if e.kind == kind)

    def to_dict(self) -> dict:
        return {"events": [e.to_dict() for e in self.events]}

    def check(self) -> list[str]:
        problems = []
        for a, b in zip(self.events, self.events[1:]):
            if not (b.seq > a.seq and b.timestamp >= a.timestamp):
                problems.append(f"events {a.seq} and {b.seq} out of order")
        for e in self.events:
            if e.kind not in EVENT_KINDS:
                problems.append(f"unknown event kind {e.kind}")
        if not self.events or self.events[-1].kind != "stop":
            problems.append("trace does not end with stop")
        elif self.stop_reason not in STOP_REASONS:
            problems.append(f"bad stop reason {self.stop_reason}")
        return problems

    @classmethod
    def load(cls, path: str | Path) -> "RunTrace":
        try:
            data = json.loads(Path(path).read_text(encoding="utf-8"))
            return cls([TraceEvent.from_dict(e) for e in data["events"]])
        except (OSError, ValueError, KeyError, TypeError) as exc:
            raise CorruptRun(f"unreadable trace {path}: {exc}") from exc


@dataclass
class RunResult:
    collage_path: Path
    state: PipelineState
    trace: RunTrace
    stop_reason: str
    final_iteration: int


@dataclass
class Providers:
    chat: ChatProvider
    images: ImageProvider
    embed: EmbeddingProvider | None = None

    @classmethod
    def mock(cls, fixtures_dir=None, script=None) -> "Providers":
        chat = ScriptedChat(script, fixtures_dir) if script is not None else MockChat(fixtures_dir)
        return cls(chat, MockImageGenerator(), MockEmbedder())


def file_digest(path: str | Path) -> str:
    return hashlib.sha256(Path(path).read_bytes()).hexdigest()


def _json_digest(obj: Any) -> str:
    return hashlib.sha256(json.dumps(obj, sort_keys=True).encode()).hexdigest()


def artifact_for(kind: str, iteration: int) -> str | None:
    """File whose digest an event records, if any."""
    return {
        "reference": "transfer.json",
        "stage1": f"framework_iter{iteration}.json",
        "refinement": f"framework_iter{iteration}.json",
        "stage2": f"plan_iter{iteration}.json",
        "stage3": f"prompts_iter{iteration}.json",
        "generate": f"collage_iter{iteration}.png",
        "gate1": f"critique_iter{iteration}.json",
        "gate2": f"critique_iter{iteration}.json",
    }.get(kind)


def persist_state(state: PipelineState, run_dir: str | Path, trace: RunTrace | None = None) -> None:
    """Write the state's artifacts; files whose bytes already match are left alone."""
    run_dir = Path(run_dir)
    n = state.iteration
    files: dict[str, str] = {}
    if state.framework is not None:
        files[f"framework_iter{n}.json"] = serialize(state.framework)
    if state.plan is not None:
        files[f"plan_iter{n}.json"] = serialize(state.plan)
    if state.prompt_set is not None:
        files[f"prompts_iter{n}.json"] = serialize(state.prompt_set)
    for i, report in enumerate(state.critique_history):
        files[f"critique_iter{i}.json"] = serialize(report)
    if state.transfer is not None:
        files["transfer.json"] = serialize(state.transfer)
    if trace is not None:
        files[TRACE_FILE] = json.dumps(trace.to_dict(), indent=2) + "\n"
    for name, text in files.items():
        path = run_dir / name
        try:
            if path.is_file() and path.read_text(encoding="utf-8") == text:
                continue
        except OSError as exc:
            raise IoError(f"cannot read {path}: {exc}") from exc
        atomic_write_text(path, text)
    if state.collage_path is not None and not Path(state.collage_path).is_file():
        raise IoError(f"collage {state.collage_path} missing")


class Pipeline:
    def __init__(
        self,
        providers: Providers,
        *,
        library: PromptLibrary = DEFAULT_LIBRARY,
        attach_reference: bool = False,
        repair_budget: int = 2,
        temperature: float = 0.7,
    ):
        self.providers = providers
        chat = providers.chat
        self.ideation = IdeationAgent(chat, library=library, repair_budget=repair_budget, temperature=temperature)
        self.reference = ReferenceAgent(chat, library=library, repair_budget=repair_budget, temperature=temperature)
        self.generation = GenerationAgent(chat, providers.images, library=library, repair_budget=repair_budget,
                                          temperature=temperature, attach_reference=attach_reference)
        self.critic = CritiqueAgent(chat, library=library, repair_budget=repair_budget)

    # -- public API -----------------------------------------------------
    def run(self, product: ProductInput, cfg: PipelineConfig) -> RunResult:
        cfg.check()
        require_valid(product, "product input")
        if cfg.mode == "reference" and product.reference is None:
            raise PreconditionError("reference mode needs a reference image")
        run_dir = Path(cfg.run_dir)
        _prepare_dir(run_dir)
        with _lock(run_dir):
            if (run_dir / TRACE_FILE).exists():
                raise PreconditionError(f"{run_dir} already holds a run; use resume")
            _write_input(run_dir, product, cfg)
            return _Run(self, product, cfg, RunTrace()).execute()

    def resume(self, run_dir: str | Path, cfg: PipelineConfig) -> RunResult:
        cfg.check()
        run_dir = Path(run_dir)
        if cfg.run_dir != run_dir:
            cfg = PipelineConfig(**{**cfg.__dict__, "run_dir": run_dir})
        with _lock(run_dir):
            trace_path = run_dir / TRACE_FILE
            if not trace_path.is_file():
                raise CorruptRun(f"{run_dir} has no {TRACE_FILE}")
            previous = RunTrace.load(trace_path)
            verify_artifacts(run_dir, previous)
            product = _read_input(run_dir)
            return _Run(self, product, cfg, previous).execute()


def run(product: ProductInput, cfg: PipelineConfig, providers: Providers, **kwargs) -> RunResult:
    return Pipeline(providers, **kwargs).run(product, cfg)


def resume(run_dir: str | Path, cfg: PipelineConfig, providers: Providers, **kwargs) -> RunResult:
    return Pipeline(providers, **kwargs).resume(run_dir, cfg)


def verify_artifacts(run_dir: Path, trace: RunTrace) -> None:
    for event in trace.events:
        name = artifact_for(event.kind, event.iteration)
        if name is None:
            continue
        path = run_dir / name
        if not path.is_file():
            raise CorruptRun(f"trace event {event.seq} ({event.kind}) references missing {name}")
        if file_digest(path) != event.payload_digest:
            raise CorruptRun(f"{name} does not match the digest recorded in the trace")


# -- internals ----------------------------------------------------------


def _prepare_dir(run_dir: Path) -> None:
    try:
        run_dir.mkdir(parents=True, exist_ok=True)
    except OSError as exc:
        raise IoError(f"cannot create run dir {run_dir}: {exc}") from exc


class _lock:
    def __init__(self, run_dir: Path):
        self.lock = FileLock(str(run_dir / LOCK_FILE), timeout=0)

    def __enter__(self):
        try:
            self.lock.acquire()
        except Timeout as exc:
            raise IoError(f"run directory is in use ({LOCK_FILE} held)") from exc
        except OSError as exc:
            raise IoError(f"cannot lock run directory: {exc}") from exc
        return self

    def __exit__(self, *exc):
        self.lock.release()


def _write_input(run_dir: Path, product: ProductInput, cfg: PipelineConfig) -> None:
    atomic_write_bytes(run_dir / "packshot.png", encode_png(product.packshot))
    if product.reference is not None:
        atomic_write_bytes(run_dir / "reference.png", encode_png(product.reference))
    atomic_write_json(run_dir / INPUT_FILE, {
        "name": product.name,
        "user_intent": product.user_intent,
        "packshot": "packshot.png",
        "reference": "reference.png" if product.reference is not None else None,
        "mode": cfg.mode,
        "layout": cfg.layout.to_dict(),
    })


def _read_input(run_dir: Path) -> ProductInput:
    try:
        data = json.loads((run_dir / INPUT_FILE).read_text(encoding="utf-8"))
        ref = data.get("reference")
        return ProductInput.from_files(
            run_dir / data["packshot"], data["name"], data.get("user_intent"),
            run_dir / ref if ref else None,
        )
    except (OSError, ValueError, KeyError, CorruptInput) as exc:
        raise CorruptRun(f"cannot restore run input: {exc}") from exc


class _Run:
    """One execution (fresh or resumed) of the loop over a run directory."""

    def __init__(self, pipeline: Pipeline, product: ProductInput, cfg: PipelineConfig, previous: RunTrace):
        self.p = pipeline
        self.product = product
        self.cfg = cfg
        self.dir = Path(cfg.run_dir)
        self.previous = list(previous.events)
        if self.previous and self.previous[-1].detail.get("reason") == "fatal_error":
            # a crashed run continues from its last good step
            self.previous.pop()
        self.replayed = 0
        self.trace = RunTrace()
        self.state = PipelineState()

    # -- step machinery ---------------------------------------------------
    def _timestamp(self, seq: int) -> float:
        return float(seq) if self.cfg.normalize_timestamps else time.time()

    def _record(self, kind: str, iteration: int, digest: str, detail: dict | None = None) -> None:
        seq = len(self.trace.events)
        self.trace.events.append(TraceEvent(seq, self._timestamp(seq), kind, iteration, digest, detail or {}))
        atomic_write_json(self.dir / TRACE_FILE, self.trace.to_dict())

    def _replayable(self, kind: str, iteration: int) -> TraceEvent | None:
        if self.replayed < len(self.previous):
            event = self.previous[self.replayed]
            if event.kind == kind and event.iteration == iteration:
                return event
            if event.kind != "stop":
                raise CorruptRun(
                    f"trace diverges at event {event.seq}: recorded {event.kind}@{event.iteration}, "
                    f"expected {kind}@{iteration}"
                )
        return None

    def step(self, kind: str, iteration: int, compute: Callable[[], Any], load: Callable[[], Any],
             detail: Callable[[Any], dict] | None = None) -> Any:
        """Replay ``kind@iteration`` from disk if the old trace has it, else compute it."""
        event = self._replayable(kind, iteration)
        if event is not None:
            try:
                value = load()
            except (OSError, ParseError, SchemaError, CorruptInput) as exc:
                raise CorruptRun(f"cannot reload {kind}@{iteration}: {exc}") from exc
            self.replayed += 1
            self.trace.events.append(TraceEvent(len(self.trace.events), event.timestamp, kind, iteration,
                                                event.payload_digest, event.detail))
            return value
        chat, images = self.p.providers.chat.calls, self.p.providers.images.calls
        chat_start, image_start = len(chat), len(images)
        value = compute()
        name = artifact_for(kind, iteration)
        info = dict(detail(value)) if detail else {}
        digest = file_digest(self.dir / name) if name else _json_digest(info)
        calls = {}
        if len(chat) > chat_start:
            calls["chat"] = [list(c) for c in chat[chat_start:]]
        if len(images) > image_start:
            calls["image"] = list(images[image_start:])
        if calls:
            info["calls"] = calls
        self._record(kind, iteration, digest, info)
        return value

    def _read(self, name: str, kind: str):
        return parse_plan_json((self.dir / name).read_text(encoding="utf-8"), kind, layout=self.cfg.layout)

    def _write(self, name: str, obj) -> None:
        atomic_write_text(self.dir / name, serialize(obj))

    # -- stages -----------------------------------------------------------
    def _framework_step(self, kind: str, n: int, compute):
        name = f"framework_iter{n}.json"

        def run():
            fw = compute()
            self._write(name, fw)
            return fw

        return self.step(kind, n, run, lambda: self._read(name, "framework"),
                         detail=(lambda fw: {}) if kind == "stage1" else None)

    def _downstream(self, n: int, refinement=None) -> None:
        """Stage 2, Stage 3 and generation for iteration ``n``."""
        s, cfg = self.state, self.cfg
        plan_name, prompts_name = f"plan_iter{n}.json", f"prompts_iter{n}.json"

        def do_plan():
            plan = self.p.ideation.plan_how(self.product, s.framework, cfg.layout, s.transfer,
                                            refinement, prior=s.plan if refinement else None)
            self._write(plan_name, plan)
            return plan

        s.plan = self.step("stage2", n, do_plan, lambda: self._read(plan_name, "plan"))

        def do_prompts():
            ps = self.p.generation.compile_prompts(s.plan, s.framework, self.product)
            self._write(prompts_name, ps)
            return ps

        s.prompt_set = self.step("stage3", n, do_prompts, lambda: self._read(prompts_name, "prompt_set"))
        path = self.step(
            "generate", n,
            lambda: self.p.generation.synthesize_collage(s.prompt_set, self.product, cfg.layout, n, self.dir),
            lambda: self._check_collage(n),
        )
        s.collage_path = str(path)
        s.iteration = n

    def _check_collage(self, n: int) -> Path:
        path = self.dir / f"collage_iter{n}.png"
        load_image(path)
        return path

    def _critique(self, n: int) -> CritiqueReport:
        name = f"critique_iter{n}.json"
        s = self.state

        def run():
            report = self.p.critic.critique(load_image(s.collage_path), self.product, s.framework, s.plan,
                                            self.cfg.gates)
            self._write(name, report)
            return report

        report = self.step("gate1", n, run, lambda: self._read(name, "critique"),
                           detail=lambda r: {"pass": r.gate1_pass, "scores": r.narrative.values()})
        if report.gate1_pass:
            self.step("gate2", n, lambda: report, lambda: report,
                      detail=lambda r: {"pass": r.gate2_pass, "scores": r.photo.values()})
        s.critique_history.append(report)
        return report

    # -- gated loop -------------------------------------------------------
    def execute(self) -> RunResult:
        try:
            return self._loop()
        except CorruptRun:
            raise
        except (ProviderError, IoError, MalformedPlan) as exc:
            log.error("fatal error: %s", exc)
            try:
                self._record("stop", self.state.iteration, _json_digest({"reason": "fatal_error"}),
                             {"reason": "fatal_error", "error": f"{type(exc).__name__}: {exc}"})
            except CollageError:
                pass
            raise FatalError(f"{type(exc).__name__}: {exc}") from exc

    def _loop(self) -> RunResult:
        s, cfg, p = self.state, self.cfg, self.p

        if cfg.mode == "reference":
            def extract():
                td = p.reference.extract_transfer_plan(self.product.reference, cfg.layout, self.product)
                self._write("transfer.json", td)
                return td

            s.transfer = self.step("reference", 0, extract, lambda: self._read("transfer.json", "transfer"))

        s.framework = self._framework_step(
            "stage1", 0, lambda: p.ideation.plan_what(self.product, s.transfer, layout=cfg.layout))
        self._downstream(0)

        reason = "budget_exhausted"
        n = 0
        for _ in range(cfg.max_iterations):
            report = self._critique(n)
            suggestion = report.suggestion
            if not report.gate1_pass:
                n += 1
                self.step("revision", n, lambda: suggestion, lambda: suggestion,
                          detail=lambda sug: {"suggestion": sug.to_dict()})
                prior = s.framework
                s.framework = self._framework_step(
                    "stage1", n,
                    lambda: p.ideation.plan_what(self.product, s.transfer, suggestion, prior=prior,
                                                 layout=cfg.layout))
                self._downstream(n)
                continue
            if not report.gate2_pass:
                n += 1
                frozen = s.framework

                def refine():
                    self._write(f"framework_iter{n}.json", frozen)
                    return frozen

                s.framework = self.step("refinement", n, refine,
                                        lambda: self._read(f"framework_iter{n}.json", "framework"))
                self._downstream(n, refinement=suggestion)
                continue
            reason = "gates_passed"
            break

        final = n
        if reason == "budget_exhausted" and cfg.return_policy == "best":
            if len(s.critique_history) <= n:
                self._critique(n)
            final = self._best_iteration()

        final_path = self.dir / f"collage_iter{final}.png"
        calls = {
            "chat": sum(len(e.detail.get("calls", {}).get("chat", [])) for e in self.trace.events),
            "image": sum(len(e.detail.get("calls", {}).get("image", [])) for e in self.trace.events),
        }
        self.step("stop", n, lambda: None, lambda: None,
                  detail=lambda _: {"reason": reason, "final_iteration": final,
                                    "final_collage": final_path.name, "call_totals": calls})
        persist_state(s, self.dir, self.trace)
        stop = self.trace.events[-1].detail
        return RunResult(self.dir / stop["final_collage"], s, self.trace, stop["reason"],
                         stop["final_iteration"])

    def _best_iteration(self) -> int:
        def key(i: int):
            r = self.state.critique_history[i]
            photo = r.photo_mean if r.photo_mean is not None else -1.0
            return (r.gate1_pass, photo, i)

        return max(range(len(self.state.critique_history)), key=key)
