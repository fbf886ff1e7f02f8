"""HTTP service exposing the intention board for multi-process agents, plus
one-shot scenario and trial endpoints. The CLI `serve` subcommand hosts it.

Intent payloads mirror the newline-delimited JSON wire format, so the NDJSON
endpoint streams exactly what the codec writes.
"""

from __future__ import annotations

import numpy as np
from fastapi import FastAPI, HTTPException, Response
from pydantic import BaseModel, Field

from .coordination import BoardEntry, IntentionBoard, decode_entry, encode_entry
from .cost import CostWeights
from .harness import ALGOS, AlgoMode, run_trial
from .mppi import PlannerConfig
from .world import TASKS, make_scenario, scenario_to_json


class RadiiRegistration(BaseModel):
    arm: int = Field(ge=0)
    radii: list[float]


class IntentMessage(BaseModel):
    """One board entry; the JSON body is the wire-format object."""

    arm: int = Field(ge=0)
    stamp: int = Field(ge=0)
    d: float = Field(ge=0.0, description="publisher's end-effector goal distance (m)")
    traj: list[list[list[float]]] = Field(description="H x S x 3 sphere centers")

    @classmethod
    def from_entry(cls, entry: BoardEntry) -> "IntentMessage":
        return cls(arm=entry.arm_id, stamp=entry.stamp, d=entry.goal_distance,
                   traj=entry.sphere_trajectory.tolist())

    def to_entry(self) -> BoardEntry:
        return decode_entry(self.model_dump_json())


class ScenarioRequest(BaseModel):
    task: str
    level: int = Field(ge=1, le=5)
    seed: int
    n_arms: int = Field(default=4, ge=1, le=4)
    arm_preset: str = "desk6"
    t_max: int = Field(default=500, ge=1, le=5000)
    spheres_per_link: int = Field(default=3, ge=1, le=6)


class TrialRequest(ScenarioRequest):
    algo: str = "mrs"
    rollouts: int = Field(default=64, ge=1, le=2000)
    iters: int = Field(default=2, ge=1, le=10)
    horizon: int = Field(default=16, ge=2, le=64)
    planner_seed: int | None = None
    timing: bool = True


def create_app(board: IntentionBoard | None = None, n_arms: int = 4) -> FastAPI:
    app = FastAPI(title="mrstorm", version="0.1.0")
    app.state.board = board or IntentionBoard(n_arms)

    def _board() -> IntentionBoard:
        return app.state.board

    @app.get("/health")
    def health():
        return {"status": "ok", "arms": _board().n_arms}

    @app.post("/board/radii")
    def register_radii(body: RadiiRegistration):
        try:
            _board().register_radii(body.arm, np.asarray(body.radii))
        except ValueError as exc:
            raise HTTPException(status_code=409, detail=str(exc))
        return {"arm": body.arm, "count": len(body.radii)}

    @app.get("/board/radii/{arm}")
    def get_radii(arm: int):
        try:
            radii = _board().radii(arm)
        except (KeyError, ValueError) as exc:
            raise HTTPException(status_code=404, detail=str(exc))
        return {"arm": arm, "radii": radii.tolist()}

    @app.post("/board/intents")
    def publish_intent(body: IntentMessage):
        board = _board()
        if not 0 <= body.arm < board.n_arms:
            raise HTTPException(status_code=404, detail=f"arm {body.arm} out of range")
        entry = body.to_entry()
        before = board.read_intents(None)
        stale = any(e.arm_id == entry.arm_id and e.stamp >= entry.stamp for e in before)
        board.publish_intent(entry)
        return {"accepted": not stale, "stamp": entry.stamp}

    @app.get("/board/intents")
    def read_intents(exclude: int | None = None):
        entries = _board().read_intents(exclude)
        return {"entries": [IntentMessage.from_entry(e).model_dump() for e in entries]}

    @app.get("/board/intents.ndjson")
    def read_intents_ndjson(exclude: int | None = None):
        entries = _board().read_intents(exclude)
        body = b"".join(encode_entry(e) for e in entries)
        return Response(content=body, media_type="application/x-ndjson")

    @app.post("/scenarios")
    def build_scenario(body: ScenarioRequest):
        if body.task not in TASKS:
            raise HTTPException(status_code=422, detail=f"unknown task {body.task!r}")
        scenario = make_scenario(body.task, body.level, body.seed, n_arms=body.n_arms,
                                 arm_preset=body.arm_preset, t_max=body.t_max,
                                 spheres_per_link=body.spheres_per_link)
        return Response(content=scenario_to_json(scenario), media_type="application/json")

    @app.post("/trials")
    def run_one_trial(body: TrialRequest):
        if body.task not in TASKS:
            raise HTTPException(status_code=422, detail=f"unknown task {body.task!r}")
        if body.algo not in ALGOS:
            raise HTTPException(status_code=422, detail=f"unknown algo {body.algo!r}")
        scenario = make_scenario(body.task, body.level, body.seed, n_arms=body.n_arms,
                                 arm_preset=body.arm_preset, t_max=body.t_max,
                                 spheres_per_link=body.spheres_per_link)
        mode = AlgoMode(body.algo, n_rollouts=body.rollouts, opt_iters=body.iters)
        config = PlannerConfig(horizon=body.horizon, n_rollouts=body.rollouts,
                               opt_iters=body.iters)
        result = run_trial(scenario, mode, CostWeights(), config,
                           trial_seed=body.planner_seed, timing=body.timing)
        import json

        return json.loads(result.metrics.to_json())

    return app


class BoardClient:
    """IntentionBoard-compatible client for a remote board service.

    Lets an Agent in another process coordinate through HTTP: same
    register/publish/read surface as the in-process board.
    """

    def __init__(self, base_url: str = "", client=None):
        if client is None:
            import httpx

            client = httpx.Client(base_url=base_url)
        self._client = client

    def register_radii(self, arm_id: int, radii) -> None:
        resp = self._client.post(
            "/board/radii", json={"arm": arm_id, "radii": np.asarray(radii).tolist()}
        )
        if resp.status_code == 409:
            raise ValueError(resp.json()["detail"])
        resp.raise_for_status()

    def radii(self, arm_id: int) -> np.ndarray:
        resp = self._client.get(f"/board/radii/{arm_id}")
        if resp.status_code == 404:
            raise KeyError(resp.json()["detail"])
        resp.raise_for_status()
        return np.asarray(resp.json()["radii"])

    def publish_intent(self, entry: BoardEntry) -> None:
        resp = self._client.post(
            "/board/intents", json=IntentMessage.from_entry(entry).model_dump()
        )
        resp.raise_for_status()

    def read_intents(self, self_id: int | None = None) -> list[BoardEntry]:
        params = {} if self_id is None else {"exclude": self_id}
        resp = self._client.get("/board/intents.ndjson", params=params)
        resp.raise_for_status()
        return [decode_entry(line) for line in resp.content.splitlines() if line.strip()]
