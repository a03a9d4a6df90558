"""HTTP service for interactive human sessions.

Serves 20-trial sessions: validity previews (never any stability hint),
placement commits adjudicated server-side by the static oracle, a strict
per-placement deadline in the time-constrained condition (server clock is
the only authority), and an append-only JSONL event log written before any
response leaves the server, so a crashed session replays from disk.
"""
from __future__ import annotations

import json
import threading
import time
import uuid
from dataclasses import dataclass, field
from pathlib import Path

from fastapi import FastAPI, HTTPException
from pydantic import BaseModel

from .experiment import generate_tasks
from .metrics import StepRecord, TraceRecord, save_traces, summarize_runs
from .model import (
    VALID,
    Action,
    DecisionState,
    TaskSpec,
    apply_action,
    geometry_to_dict,
    overhang,
    validate_action,
)
from .stability import is_stable_static

STEP_TIME_LIMIT_S = 5.0
TRIALS_PER_SESSION = 20
CONDITIONS = ("time_constrained", "unconstrained")


@dataclass
class Trial:
    task: TaskSpec
    state: DecisionState
    steps: list[StepRecord] = field(default_factory=list)
    pending_previews: list[dict] = field(default_factory=list)
    step_started: float = 0.0
    deadline: float | None = None
    outcome: str | None = None      # stable | collapsed | timed_out | abandoned
    reward: float = 0.0


@dataclass
class Session:
    id: str
    condition: str
    task_seed: int
    tasks: list[TaskSpec]
    created: float
    trial_index: int = 0
    trials: list[Trial] = field(default_factory=list)
    status: str = "active"          # active | complete | finalized
    lock: threading.Lock = field(default_factory=threading.Lock)
    event_seq: int = 0

    @property
    def trial(self) -> Trial:
        return self.trials[-1]

    def total_reward(self) -> float:
        return sum(t.reward for t in self.trials if t.outcome is not None)


class SessionStore:
    """All session state plus the append-only event log underneath it."""

    def __init__(self, data_dir: str | Path, clock=time.time):
        self.data_dir = Path(data_dir)
        self.data_dir.mkdir(parents=True, exist_ok=True)
        self.clock = clock
        self._sessions: dict[str, Session] = {}
        self._lock = threading.Lock()

    # -- event log ----------------------------------------------------------

    def events_path(self, session_id: str) -> Path:
        return self.data_dir / f"events_{session_id}.jsonl"

    def _append_event(self, session: Session, kind: str, payload: dict) -> None:
        event = {
            "seq": session.event_seq,
            "ts": self.clock(),
            "kind": kind,
            "payload": payload,
        }
        session.event_seq += 1
        with open(self.events_path(session.id), "a") as fh:
            fh.write(json.dumps(event, sort_keys=True) + "\n")
            fh.flush()

    # -- lifecycle ----------------------------------------------------------

    def create_session(self, condition: str, task_seed: int) -> Session:
        if condition not in CONDITIONS:
            raise ValueError(f"condition must be one of {CONDITIONS}")
        session = Session(
            id=uuid.uuid4().hex[:12],
            condition=condition,
            task_seed=task_seed,
            tasks=generate_tasks(TRIALS_PER_SESSION, task_seed),
            created=self.clock(),
        )
        with self._lock:
            self._sessions[session.id] = session
        self._start_trial(session)
        self._append_event(session, "session_created", {"condition": condition, "seed": task_seed})
        return session

    def get(self, session_id: str) -> Session:
        with self._lock:
            session = self._sessions.get(session_id)
        if session is None:
            raise KeyError(session_id)
        return session

    def _start_trial(self, session: Session) -> None:
        task = session.tasks[session.trial_index]
        now = self.clock()
        trial = Trial(task=task, state=task.initial_state(), step_started=now)
        if session.condition == "time_constrained":
            trial.deadline = now + STEP_TIME_LIMIT_S
        session.trials.append(trial)

    def _end_trial(self, session: Session, outcome: str, reward: float) -> None:
        trial = session.trial
        trial.outcome = outcome
        trial.reward = reward
        trial.deadline = None
        self._append_event(session, "trial_end", {
            "trial_index": session.trial_index,
            "task_id": trial.task.id,
            "outcome": outcome,
            "reward": reward,
        })
        session.trial_index += 1
        if session.trial_index >= len(session.tasks):
            session.status = "complete"
        else:
            self._start_trial(session)

    def _resolve_timeout(self, session: Session) -> bool:
        """Retire the active trial if its deadline already passed."""
        if session.status != "active":
            return False
        trial = session.trial
        if trial.deadline is not None and self.clock() > trial.deadline:
            self._append_event(session, "timeout", {"trial_index": session.trial_index})
            self._end_trial(session, "timed_out", 0.0)
            return True
        return False

    # -- interactions -------------------------------------------------------

    def preview(self, session_id: str, x: float, layer: int, dwell_ms: float | None = None) -> str:
        session = self.get(session_id)
        with session.lock:
            self._resolve_timeout(session)
            if session.status != "active":
                raise LookupError("session has no active trial")
            trial = session.trial
            verdict = validate_action(trial.state, Action(x, layer))
            trial.pending_previews.append(
                {"x": x, "layer": layer, "dwell_ms": dwell_ms if dwell_ms is not None else 0.0}
            )
            self._append_event(session, "preview", {
                "trial_index": session.trial_index,
                "x": x, "layer": layer, "verdict": verdict,
                "dwell_ms": dwell_ms if dwell_ms is not None else 0.0,
            })
            return verdict

    def place(self, session_id: str, x: float, layer: int, client_ts: float | None = None) -> dict:
        """Commit a placement. Server clock first, legality second, physics third."""
        session = self.get(session_id)
        with session.lock:
            if self._resolve_timeout(session):
                return {"outcome": "timed_out"}
            if session.status != "active":
                raise LookupError("session has no active trial")
            trial = session.trial
            now = self.clock()
            action = Action(x, layer)
            verdict = validate_action(trial.state, action)
            if verdict != VALID:
                self._append_event(session, "place", {
                    "trial_index": session.trial_index,
                    "x": x, "layer": layer, "client_ts": client_ts,
                    "verdict": verdict, "outcome": "rejected",
                })
                return {"outcome": "rejected", "verdict": verdict}
            new_state = apply_action(trial.state, action)
            stable = is_stable_static(new_state.geometry).stable
            step = StepRecord(
                x=x,
                layer=layer,
                duration_s=max(0.0, now - trial.step_started),
                previews=tuple(trial.pending_previews),
                stable=stable,
            )
            trial.steps.append(step)
            trial.pending_previews = []
            trial.state = new_state
            self._append_event(session, "place", {
                "trial_index": session.trial_index,
                "x": x, "layer": layer, "client_ts": client_ts,
                "verdict": verdict, "stable": stable,
                "duration_s": step.duration_s,
            })
            if not stable:
                self._end_trial(session, "collapsed", 0.0)
                return {"outcome": "collapsed"}
            if not new_state.remaining:
                reward = overhang(new_state.geometry)
                self._end_trial(session, "stable", reward)
                return {"outcome": "placed_stable", "trial_reward": reward}
            trial.step_started = now
            if session.condition == "time_constrained":
                trial.deadline = now + STEP_TIME_LIMIT_S
            return {"outcome": "placed_stable"}

    def state_payload(self, session_id: str) -> dict:
        session = self.get(session_id)
        with session.lock:
            self._resolve_timeout(session)
            trial = session.trial if session.trials else None
            payload = {
                "session_id": session.id,
                "condition": session.condition,
                "status": session.status,
                "trial_index": min(session.trial_index, len(session.tasks) - 1),
                "n_trials": len(session.tasks),
                "score": session.total_reward(),
                "trial_rewards": [t.reward for t in session.trials if t.outcome is not None],
            }
            if session.status == "active" and trial is not None:
                payload["step_index"] = len(trial.steps)
                payload["geometry"] = geometry_to_dict(trial.state.geometry)
                payload["remaining"] = [b.width for b in trial.state.remaining]
                if trial.deadline is not None:
                    payload["deadline_ms"] = int(trial.deadline * 1000)
            return payload

    # -- export -------------------------------------------------------------

    def traces(self, session: Session) -> list[TraceRecord]:
        out = []
        for trial in session.trials:
            if trial.outcome is None:
                continue
            out.append(TraceRecord(
                task_id=trial.task.id,
                sequence=tuple(b.width for b in trial.task.sequence),
                condition=session.condition,
                steps=tuple(trial.steps),
                reward=trial.reward,
                aborted=trial.outcome in ("timed_out", "abandoned"),
                meta={"outcome": trial.outcome, "session": session.id},
            ))
        return out

    def finalize(self, session_id: str) -> dict:
        session = self.get(session_id)
        with session.lock:
            self._resolve_timeout(session)
            while session.status == "active":
                self._append_event(session, "abandoned", {"trial_index": session.trial_index})
                self._end_trial(session, "abandoned", 0.0)
            traces = self.traces(session)
            export_path = self.data_dir / f"traces_{session.id}.jsonl"
            save_traces(traces, str(export_path))
            summary = summarize_runs(traces)
            session.status = "finalized"
            self._append_event(session, "finalized", {"traces_path": str(export_path)})
            return {
                "traces_path": str(export_path),
                "n_trials": len(traces),
                "total_reward": sum(t.reward for t in traces),
                "stable_proportion": summary["stable_proportion"],
                "mean_decision_time": summary["mean_decision_time"],
            }


def rebuild_session(store: SessionStore, session_id: str) -> Session:
    """Reconstruct a session purely from its event log (crash recovery).

    Replays create/preview/place/timeout events through a fresh store with a
    scripted clock, so the rebuilt session state matches what the events say.
    """
    events = []
    with open(store.events_path(session_id)) as fh:
        for line in fh:
            if line.strip():
                events.append(json.loads(line))
    events.sort(key=lambda e: e["seq"])
    now = {"t": 0.0}
    shadow = SessionStore(store.data_dir / f"rebuild_{session_id}", clock=lambda: now["t"])
    session = None
    for ev in events:
        now["t"] = ev["ts"]
        kind, payload = ev["kind"], ev["payload"]
        if kind == "session_created":
            session = shadow.create_session(payload["condition"], payload["seed"])
        elif kind == "place":
            shadow.place(session.id, payload["x"], payload["layer"], payload.get("client_ts"))
        elif kind == "preview":
            shadow.preview(session.id, payload["x"], payload["layer"], payload.get("dwell_ms"))
        elif kind == "timeout":
            with session.lock:
                shadow._resolve_timeout(session)
        elif kind == "abandoned":
            with session.lock:
                if session.status == "active":
                    shadow._end_trial(session, "abandoned", 0.0)
    return session


# ---------------------------------------------------------------------------
# HTTP layer

class CreateSessionBody(BaseModel):
    condition: str
    seed: int = 0


class PreviewBody(BaseModel):
    x: float
    layer: int
    dwell_ms: float | None = None


class PlaceBody(BaseModel):
    x: float
    layer: int
    client_ts: float | None = None


def create_app(store: SessionStore) -> FastAPI:
    app = FastAPI(title="overhang-session-service")

    @app.post("/sessions")
    def create_session(body: CreateSessionBody):
        try:
            session = store.create_session(body.condition, body.seed)
        except ValueError as exc:
            raise HTTPException(status_code=422, detail=str(exc))
        return {"id": session.id, "state": store.state_payload(session.id)}

    @app.get("/sessions/{session_id}/state")
    def get_state(session_id: str):
        try:
            return store.state_payload(session_id)
        except KeyError:
            raise HTTPException(status_code=404, detail="unknown session")

    @app.post("/sessions/{session_id}/preview")
    def preview(session_id: str, body: PreviewBody):
        try:
            verdict = store.preview(session_id, body.x, body.layer, body.dwell_ms)
        except KeyError:
            raise HTTPException(status_code=404, detail="unknown session")
        except LookupError as exc:
            raise HTTPException(status_code=409, detail=str(exc))
        return {"verdict": verdict}    # legality only, never stability

    @app.post("/sessions/{session_id}/place")
    def place(session_id: str, body: PlaceBody):
        try:
            outcome = store.place(session_id, body.x, body.layer, body.client_ts)
        except KeyError:
            raise HTTPException(status_code=404, detail="unknown session")
        except LookupError as exc:
            raise HTTPException(status_code=409, detail=str(exc))
        outcome["state"] = store.state_payload(session_id)
        return outcome

    @app.post("/sessions/{session_id}/finalize")
    def finalize(session_id: str):
        try:
            return store.finalize(session_id)
        except KeyError:
            raise HTTPException(status_code=404, detail="unknown session")

    return app
