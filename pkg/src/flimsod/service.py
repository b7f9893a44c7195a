"""Local HTTP/JSON service for the annotation UI and the interactive
selection loop.

Single-process, single mutation queue: marker writes, training jobs and
selection steps are serialized through one lock, and every mutation is
appended to a JSONL log from which the server state can be replayed.
"""

from __future__ import annotations

import json
import threading
import uuid
from dataclasses import dataclass, field
from pathlib import Path

from fastapi import FastAPI, HTTPException, Request, Response
from fastapi.middleware.cors import CORSMiddleware

from . import evalsel
from .cli import build_selection_callbacks, _load_dataset_images
from .encoder import EncoderModel, load_model, save_model, train_encoder
from .imgcore import encode_saliency_png, load_image
from .markers import MarkerParseError, merge_marker_sets, parse_markers
from .pipeline import PipelineConfig, infer_saliency


@dataclass
class JobState:
    id: str
    phase: str = "queued"        # queued | training | done | failed
    progress: float = 0.0
    error: str | None = None

    def to_dict(self) -> dict:
        return {"id": self.id, "phase": self.phase,
                "progress": self.progress, "error": self.error}


@dataclass
class ServerState:
    cfg: PipelineConfig
    image_paths: dict[str, Path]
    dims: dict[str, tuple[int, int]]
    log_path: Path
    lock: threading.Lock = field(default_factory=threading.Lock)
    model: EncoderModel | None = None
    jobs: dict[str, JobState] = field(default_factory=dict)
    active_job: str | None = None
    session: evalsel.SelectionSession | None = None
    rankings: list[tuple[str, float]] = field(default_factory=list)
    last_score: float = 0.0
    rankings_stale: bool = True
    log_seq: int = 0

    def log(self, kind: str, **payload) -> None:
        self.log_seq += 1
        entry = {"seq": self.log_seq, "kind": kind, **payload}
        with self.log_path.open("a") as fh:
            fh.write(json.dumps(entry) + "\n")


def replay_log(log_path: Path) -> dict:
    """Reconstruct the mutable server state (markers, selection session)
    from the append-only mutation log."""
    markers: dict[str, str] = {}
    history: list[dict] = []
    for line in log_path.read_text().splitlines():
        if not line.strip():
            continue
        entry = json.loads(line)
        kind = entry["kind"]
        if kind == "markers_put":
            markers[entry["image"]] = entry["text"]
        elif kind in ("selection_init", "selection_step"):
            history.append(entry["event"])
    session = evalsel.replay_history(history) if history else None
    return {
        "markers": markers,
        "session": session.to_dict() if session else None,
    }


def create_app(cfg: PipelineConfig) -> FastAPI:
    if cfg.dataset is None:
        raise ValueError("service needs a dataset in the config")
    image_paths = _load_dataset_images(cfg.dataset.images_dir)
    dims = {}
    for iid, path in image_paths.items():
        img = load_image(path)
        dims[iid] = (img.width, img.height)
    state_dir = cfg.state_dir or (cfg.dataset.images_dir.parent / "state")
    state_dir.mkdir(parents=True, exist_ok=True)
    state = ServerState(cfg=cfg, image_paths=image_paths, dims=dims,
                        log_path=state_dir / "mutations.jsonl")
    if cfg.model_path and Path(cfg.model_path).exists():
        state.model, _ = load_model(cfg.model_path)

    app = FastAPI(title="flimsod annotation service")
    app.state.server = state
    # the UI may be served as static files from another port
    app.add_middleware(CORSMiddleware, allow_origins=["*"], allow_methods=["*"],
                       allow_headers=["*"], expose_headers=["X-Saliency-Min",
                                                            "X-Saliency-Max"])

    # ------------------------------------------------------------- images
    @app.get("/api/images")
    def list_images():
        return [{"id": iid, "width": dims[iid][0], "height": dims[iid][1]}
                for iid in sorted(image_paths)]

    @app.get("/api/images/{image_id}.png")
    def get_image(image_id: str):
        path = image_paths.get(image_id)
        if path is None:
            raise HTTPException(404, f"unknown image {image_id!r}")
        return Response(path.read_bytes(), media_type="image/png")

    # ------------------------------------------------------------ markers
    def marker_path(image_id: str) -> Path:
        return cfg.dataset.markers_dir / f"{image_id}.txt"

    @app.get("/api/markers/{image_id}")
    def get_markers(image_id: str):
        if image_id not in image_paths:
            raise HTTPException(404, f"unknown image {image_id!r}")
        path = marker_path(image_id)
        if not path.exists():
            raise HTTPException(404, f"no markers for {image_id!r}")
        return Response(path.read_bytes(), media_type="text/plain; charset=utf-8")

    @app.put("/api/markers/{image_id}")
    async def put_markers(image_id: str, request: Request):
        if image_id not in image_paths:
            raise HTTPException(404, f"unknown image {image_id!r}")
        body = await request.body()
        text = body.decode("utf-8")
        try:
            ms = parse_markers(text)
        except MarkerParseError as exc:
            raise HTTPException(422, str(exc)) from exc
        im = next(iter(ms.images.values()))
        if im.image_id != image_id:
            raise HTTPException(422, f"marker file is for image {im.image_id!r}")
        if (im.width, im.height) != dims[image_id]:
            raise HTTPException(422, f"marker dims {im.width}x{im.height} do not match "
                                     f"image dims {dims[image_id][0]}x{dims[image_id][1]}")
        with state.lock:
            cfg.dataset.markers_dir.mkdir(parents=True, exist_ok=True)
            marker_path(image_id).write_bytes(body)
            state.log("markers_put", image=image_id, text=text)
        return Response(body, media_type="text/plain; charset=utf-8")

    # ----------------------------------------------------------- training
    def run_training(job: JobState):
        try:
            job.phase = "training"
            with state.lock:
                training_ids = (list(state.session.training_set) if state.session
                                else None)
            sets = []
            for iid in sorted(image_paths):
                path = marker_path(iid)
                if path.exists() and (training_ids is None or iid in training_ids):
                    sets.append(parse_markers(path.read_text()))
            if not sets:
                raise ValueError("no marker files to train from")
            ms = merge_marker_sets(sets)
            images = {iid: load_image(image_paths[iid]) for iid in ms.image_ids()}
            arch = cfg.load_architecture()
            model = train_encoder(images, ms, arch, cfg.seed)
            job.progress = 1.0
            with state.lock:
                state.model = model
                if cfg.model_path:
                    save_model(model, cfg.model_path)
                job.phase = "done"
                state.log("train_done", job=job.id,
                          images=sorted(ms.image_ids()),
                          parameters=model.parameter_count())
        except Exception as exc:
            job.phase = "failed"
            job.error = str(exc)

    @app.post("/api/train")
    def post_train():
        with state.lock:
            if state.active_job is not None:
                active = state.jobs[state.active_job]
                if active.phase in ("queued", "training"):
                    raise HTTPException(409, "a training job is already running",
                                        headers={"Retry-After": "2"})
            job = JobState(id=uuid.uuid4().hex[:12])
            state.jobs[job.id] = job
            state.active_job = job.id
            state.log("train_started", job=job.id)
        threading.Thread(target=run_training, args=(job,), daemon=True).start()
        return job.to_dict()

    @app.get("/api/jobs/{job_id}")
    def get_job(job_id: str):
        job = state.jobs.get(job_id)
        if job is None:
            raise HTTPException(404, f"unknown job {job_id!r}")
        return job.to_dict()

    # ---------------------------------------------------------- inference
    @app.post("/api/infer/{image_id}")
    def post_infer(image_id: str, decoder: str | None = None, block: int | None = None):
        if image_id not in image_paths:
            raise HTTPException(404, f"unknown image {image_id!r}")
        if state.model is None:
            raise HTTPException(409, "no trained model yet")
        decoder = decoder or cfg.decoder
        block = block or cfg.block
        if decoder == "bp":
            raise HTTPException(422, "decoder 'bp' needs offline-trained weights; "
                                     "use the CLI")
        img = load_image(image_paths[image_id])
        try:
            sal = infer_saliency(img, state.model, decoder, block, None,
                                 cfg.decoder_radius, cfg.ts_high_frac, cfg.ts_low_frac)
        except ValueError as exc:
            raise HTTPException(422, str(exc)) from exc
        png, lo, hi = encode_saliency_png(sal)
        return Response(png, media_type="image/png",
                        headers={"X-Saliency-Min": repr(lo),
                                 "X-Saliency-Max": repr(hi)})

    # ---------------------------------------------------------- selection
    def ensure_session() -> None:
        if state.session is None:
            marked = [iid for iid in sorted(image_paths) if marker_path(iid).exists()]
            pool = marked if marked else sorted(image_paths)
            state.session = evalsel.selection_init(pool, cfg.seed)
            state.rankings_stale = True
            state.log("selection_init", event=state.session.history[0])

    def ensure_rankings() -> None:
        if not state.rankings_stale:
            return
        if cfg.dataset.gt_dir is None:
            state.rankings = []
            state.last_score = 0.0
            state.rankings_stale = False
            return
        train_fn, eval_fn = build_selection_callbacks(cfg, image_paths)
        state.last_score, state.rankings = evalsel.selection_score(
            state.session, train_fn, eval_fn)
        state.rankings_stale = False

    def selection_payload() -> dict:
        session = state.session
        return {
            "training_set": sorted(session.training_set),
            "pool": sorted(session.pool),
            "x_prev": session.x_prev,
            "z_prev": session.z_prev,
            "steps": len(session.history) - 1,
            "x": state.last_score,
            "ranked_worst": [{"image_id": iid, "f_beta": fb}
                             for iid, fb in state.rankings],
        }

    @app.get("/api/selection")
    @app.get("/api/session")
    def get_selection():
        with state.lock:
            ensure_session()
            ensure_rankings()
            return selection_payload()

    @app.post("/api/selection/step")
    async def post_selection_step(request: Request):
        body = await request.json()
        if "accept" not in body or "candidate" not in body:
            raise HTTPException(422, "body must carry {accept: bool, candidate: id}")
        with state.lock:
            ensure_session()
            ensure_rankings()
            try:
                evalsel.selection_step(state.session, state.last_score,
                                       str(body["candidate"]), accept=bool(body["accept"]))
            except ValueError as exc:
                raise HTTPException(422, str(exc)) from exc
            state.log("selection_step", event=state.session.history[-1])
            state.rankings_stale = True
            ensure_rankings()
            return selection_payload()

    @app.get("/api/state/replay")
    def get_replay():
        """Replay of the mutation log; for audit and tests."""
        with state.lock:
            if not state.log_path.exists():
                return {"markers": {}, "session": None}
            return replay_log(state.log_path)

    if cfg.frontend_dir and Path(cfg.frontend_dir).is_dir():
        from fastapi.staticfiles import StaticFiles

        app.mount("/", StaticFiles(directory=cfg.frontend_dir, html=True),
                  name="frontend")

    return app
