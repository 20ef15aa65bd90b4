"""JSONL scene persistence (one scene per line, floats at 9 significant digits)."""

from __future__ import annotations

import json
from pathlib import Path

from .synthetic import round_sig
from .types import Edge, Instance, Scene


class SceneParseError(ValueError):
    def __init__(self, path, line_no: int, reason: str):
        super().__init__(f"{path}:{line_no}: {reason}")
        self.line_no = line_no


def scene_to_dict(scene: Scene) -> dict:
    return {
        "id": scene.id,
        "instances": [
            {"id": inst.id, "label": inst.label, "points": round_sig(inst.points).tolist()}
            for inst in scene.instances
        ],
        "edges": [{"sub": e.sub, "obj": e.obj, "preds": list(e.preds)} for e in scene.edges],
        "split": scene.split,
    }


def scene_from_dict(d: dict) -> Scene:
    instances = [Instance(id=int(i["id"]), label=int(i["label"]), points=i["points"]) for i in d["instances"]]
    edges = [Edge(sub=int(e["sub"]), obj=int(e["obj"]), preds=tuple(int(p) for p in e["preds"])) for e in d["edges"]]
    return Scene(id=str(d["id"]), instances=instances, edges=edges, split=d["split"])


def save_scenes(path, scenes) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w") as fh:
        for scene in scenes:
            fh.write(json.dumps(scene_to_dict(scene), separators=(",", ":")) + "\n")
    return path


def load_scenes(path) -> list[Scene]:
    scenes = []
    with open(path) as fh:
        for line_no, line in enumerate(fh, start=1):
            if not line.strip():
                continue
            try:
                scenes.append(scene_from_dict(json.loads(line)))
            except (json.JSONDecodeError, KeyError, TypeError, ValueError) as exc:
                raise SceneParseError(path, line_no, str(exc)) from exc
    return scenes
