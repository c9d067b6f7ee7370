"""HTTP service hosting live sequential experiments.

One session = one participant answering adaptively chosen two-image
comparisons (mixed-effects scenario by default).  The service serves the
next stimulus, accepts slider responses, refits the posterior, and exposes
posterior summaries.  Sessions are single-writer (a lock per session);
distinct sessions are fully concurrent.  Every state change is appended to a
JSON-lines event log so a restarted service can rebuild its index.

The step loop is driven by the same engine as
:func:`veig.design_loop.run_sequential` with the same stream derivation, so
a scripted client reproduces an in-process sequential run exactly.
"""

from __future__ import annotations

import json
import pathlib
import secrets
import threading
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import numpy as np
from fastapi import FastAPI, HTTPException
from pydantic import BaseModel, Field

from .design_loop import PosteriorState, _select_design, posterior_update
from .estimators import EstimatorSpec
from .models import make_model, stimulus_features
from .rng import RngStream

__all__ = ["SessionStore", "create_app", "DEFAULT_SPEC"]

DEFAULT_SPEC = EstimatorSpec(kind="ml", n_outer=300, n_steps=250)
SCENARIOS = ("mixed_effects", "ces")


class CreateSession(BaseModel):
    scenario: str = "mixed_effects"
    steps: int = Field(default=10, ge=0)
    strategy: str = "oed"
    seed: int | None = None
    deadline_s: float = 30.0


class ResponseBody(BaseModel):
    step: int
    value: float


@dataclass
class Session:
    id: str
    scenario: str
    steps: int
    strategy: str
    seed: int
    deadline_s: float
    state: PosteriorState
    status: str = "active"  # active -> awaiting-response -> ... -> complete
    step: int = 0
    pending_design: object = None
    pending_info: object = None
    entropy_history: list = field(default_factory=list)
    participant: int = 0
    lock: threading.Lock = field(default_factory=threading.Lock)

    def rng(self):
        return RngStream(self.seed)


def _design_payload(model, d):
    if model.name == "mixed_effects":
        i, j = d
        return {
            "kind": "two_image_comparison",
            "left": {"image": int(i), "features": stimulus_features(i).tolist()},
            "right": {"image": int(j), "features": stimulus_features(j).tolist()},
        }
    return {"kind": "numeric", "design": np.asarray(d).tolist()}


class SessionStore:
    """Owns sessions, their locks, and the event log."""

    def __init__(self, log_dir=None, spec=DEFAULT_SPEC, vi_steps=600, vi_batch=16,
                 eig_workers=4):
        self.sessions = {}
        self.spec = spec
        self.vi_steps = vi_steps
        self.vi_batch = vi_batch
        self.eig_workers = eig_workers
        self.log_dir = pathlib.Path(log_dir) if log_dir else None
        if self.log_dir:
            self.log_dir.mkdir(parents=True, exist_ok=True)
            self._resume()

    # -- event log ---------------------------------------------------------
    def _log_path(self, sid):
        return self.log_dir / f"session_{sid}.jsonl"

    def _append_event(self, sid, event):
        if not self.log_dir:
            return
        with open(self._log_path(sid), "a") as fh:
            fh.write(json.dumps(event) + "\n")

    def _resume(self):
        for path in sorted(self.log_dir.glob("session_*.jsonl")):
            events = [json.loads(line) for line in path.read_text().splitlines() if line]
            if not events:
                continue
            head = events[0]
            session = self._build_session(
                sid=head["session_id"],
                scenario=head["scenario"],
                steps=head["steps"],
                strategy=head["strategy"],
                seed=head["seed"],
                deadline_s=head.get("deadline_s", 30.0),
                log_creation=False,
            )
            for ev in events[1:]:
                if ev["event"] == "response":
                    obs = self._obs_from_event(session, ev)
                    session.state = posterior_update(
                        session.state,
                        obs,
                        session.rng().child("vi", ev["step"]),
                        vi_steps=self.vi_steps,
                        vi_batch=self.vi_batch,
                    )
                    session.step = ev["step"]
                    session.entropy_history.append(session.state.entropy())
            session.status = (
                "complete" if session.step >= session.steps else "active"
            )
            self.sessions[session.id] = session

    def _obs_from_event(self, session, ev):
        d = ev["design"]
        if session.scenario == "mixed_effects":
            return (tuple(d), ev["value"], session.participant)
        return (np.asarray(d, dtype=float), ev["value"])

    # -- lifecycle ------------------------------------------------------------
    def _build_session(self, sid, scenario, steps, strategy, seed, deadline_s,
                       log_creation=True):
        model = make_model(scenario)
        state = PosteriorState.fresh(model)
        session = Session(
            id=sid,
            scenario=scenario,
            steps=steps,
            strategy=strategy,
            seed=seed,
            deadline_s=deadline_s,
            state=state,
        )
        session.entropy_history.append(state.entropy())
        if steps == 0:
            session.status = "complete"
        if log_creation:
            self._append_event(
                sid,
                {
                    "event": "created",
                    "session_id": sid,
                    "scenario": scenario,
                    "steps": steps,
                    "strategy": strategy,
                    "seed": seed,
                    "deadline_s": deadline_s,
                    "v": 1,
                },
            )
        return session

    def create(self, req: CreateSession):
        if req.scenario not in SCENARIOS:
            raise HTTPException(status_code=400, detail=f"unknown scenario {req.scenario!r}")
        if req.strategy not in ("random", "oed"):
            raise HTTPException(status_code=400, detail=f"unknown strategy {req.strategy!r}")
        sid = secrets.token_hex(8)
        seed = req.seed if req.seed is not None else secrets.randbits(32)
        session = self._build_session(
            sid, req.scenario, req.steps, req.strategy, seed, req.deadline_s
        )
        self.sessions[sid] = session
        return session

    def get(self, sid) -> Session:
        if sid not in self.sessions:
            raise HTTPException(status_code=404, detail="unknown session")
        return self.sessions[sid]

    # -- step machinery -----------------------------------------------------
    def next_stimulus(self, sid):
        session = self.get(sid)
        with session.lock:
            if session.status == "complete":
                raise HTTPException(status_code=409, detail="session complete")
            if session.status == "awaiting-response":
                # idempotent repeat until the response arrives
                return self._stimulus_response(session)
            t0 = time.perf_counter()
            step = session.step + 1
            d, info = _select_design(
                session.state,
                session.strategy,
                self.spec,
                session.rng().child("select", step),
                bo_kw={},
            )
            session.pending_design = d
            session.pending_info = info
            session.status = "awaiting-response"
            self._append_event(
                sid,
                {
                    "event": "stimulus",
                    "step": step,
                    "design": np.asarray(d).tolist() if not np.isscalar(d) else d,
                    "select_ms": 1e3 * (time.perf_counter() - t0),
                },
            )
            return self._stimulus_response(session)

    def _stimulus_response(self, session):
        model = session.state.model
        return {
            "step": session.step + 1,
            "of": session.steps,
            "stimulus": _design_payload(model, session.pending_design),
            "deadline_ms": int(session.deadline_s * 1000),
        }

    def submit_response(self, sid, body: ResponseBody):
        session = self.get(sid)
        with session.lock:
            if session.status == "complete":
                raise HTTPException(status_code=409, detail="session complete")
            if session.status != "awaiting-response":
                raise HTTPException(status_code=409, detail="no outstanding stimulus")
            if body.step != session.step + 1:
                raise HTTPException(status_code=409, detail="step mismatch")
            if not 0.0 <= body.value <= 1.0:
                raise HTTPException(status_code=422, detail="value outside [0, 1]")
            model = session.state.model
            eps = getattr(model, "eps", 0.0) or 0.0
            value = float(np.clip(body.value, eps, 1.0 - eps))
            step = session.step + 1
            d = session.pending_design
            if session.scenario == "mixed_effects":
                obs = (tuple(d), value, session.participant)
            else:
                obs = (np.asarray(d, dtype=float), value)
            session.state = posterior_update(
                session.state,
                obs,
                session.rng().child("vi", step),
                vi_steps=self.vi_steps,
                vi_batch=self.vi_batch,
            )
            session.step = step
            session.pending_design = None
            session.pending_info = None
            session.status = "complete" if step >= session.steps else "active"
            entropy = session.state.entropy()
            session.entropy_history.append(entropy)
            self._append_event(
                sid,
                {
                    "event": "response",
                    "step": step,
                    "design": np.asarray(d).tolist() if not np.isscalar(d) else d,
                    "value": value,
                    "entropy": entropy,
                },
            )
            return {
                "accepted": True,
                "step": step,
                "entropy": entropy,
                "complete": session.status == "complete",
            }

    def posterior_summary(self, sid):
        session = self.get(sid)
        with session.lock:
            return {
                "scenario": session.scenario,
                "step": session.step,
                "of": session.steps,
                "status": session.status,
                "entropy": session.state.entropy(),
                "entropy_history": list(session.entropy_history),
                "blocks": session.state.posterior.summaries(),
            }


def create_app(store: SessionStore | None = None):
    store = store or SessionStore()
    app = FastAPI(title="veig live experiment service", version="1")
    app.state.store = store

    @app.post("/v1/sessions", status_code=201)
    def create_session(req: CreateSession):
        session = store.create(req)
        return {"session_id": session.id, "step": 0, "of": session.steps,
                "status": session.status}

    @app.get("/v1/sessions/{sid}/next")
    def next_stimulus(sid: str):
        return store.next_stimulus(sid)

    @app.post("/v1/sessions/{sid}/response")
    def submit_response(sid: str, body: ResponseBody):
        return store.submit_response(sid, body)

    @app.get("/v1/sessions/{sid}/posterior")
    def posterior(sid: str):
        return store.posterior_summary(sid)

    return app


def main():
    import argparse

    import uvicorn

    parser = argparse.ArgumentParser(description="run the live experiment service")
    parser.add_argument("--host", default="127.0.0.1")
    parser.add_argument("--port", type=int, default=8410)
    parser.add_argument("--log-dir", default="./veig_sessions")
    parser.add_argument("--vi-steps", type=int, default=600)
    parser.add_argument("--eig-n", type=int, default=DEFAULT_SPEC.n_outer,
                        help="outer samples per EIG estimate")
    parser.add_argument("--eig-k", type=int, default=DEFAULT_SPEC.n_steps,
                        help="guide training steps per EIG estimate")
    args = parser.parse_args()
    spec = EstimatorSpec(kind="ml", n_outer=args.eig_n, n_steps=args.eig_k)
    app = create_app(
        SessionStore(log_dir=args.log_dir, spec=spec, vi_steps=args.vi_steps)
    )
    uvicorn.run(app, host=args.host, port=args.port)


if __name__ == "__main__":
    main()
