"""Manifest and label-table builders for the two benchmark protocols.

Attribute archives: every image of a class whose own attribute value
differs from a target value becomes one query for that target; positives
are the same-class images carrying the target value.  Change archives:
every pre-event image becomes one query whose unique positive is the
post-event image of the same geo-registered scene.

Builders are pure functions of their annotation inputs with stable
ordering, so reruns produce byte-identical JSONL.  Rephrasing variants
substitute only the modifier string; the target value (and therefore
relevance) is untouched.
"""

from __future__ import annotations

import logging
from typing import Sequence

from .emb1 import ExtractError

log = logging.getLogger("rscir_extract")

# attribute-type noun used by the "having ..." and "modified to have ..."
# templates; shape values additionally take the "-shaped" suffix under r1
_ATTR_NOUN = {
    "color": "color",
    "context": "context",
    "density": "density",
    "existence": "existence",
    "quantity": "quantity",
    "shape": "shape",
}


def _phrase_attribute(value: str, attr: str, phrasing: str) -> str:
    noun = _ATTR_NOUN.get(attr, attr)
    if phrasing == "plain":
        return value
    if phrasing == "r1":
        return f"being {value}-shaped" if attr == "shape" else f"being {value}"
    if phrasing == "r2":
        return f"having {value} {noun}"
    if phrasing == "r3":
        return f"with the main object modified to have {value} {noun}"
    raise ExtractError(f"unknown attribute phrasing {phrasing!r}")


PATTERNCOM_PHRASINGS = ("plain", "r1", "r2", "r3")

# canonical post-event modifier per disaster category
DISASTER_MODIFIERS = {
    "hurricane": "post-hurricane",
    "wildfire": "post-fire",
    "flood": "post-flood",
    "tsunami": "post-tsunami",
    "earthquake": "post-earthquake",
    "volcano": "post-volcano",
}

# impact-oriented (r1) and disaster-explicit (r2) rephrasings
_DISASTER_R1 = {
    "hurricane": "storm-damaged area",
    "wildfire": "burned area",
    "flood": "flooded area",
    "tsunami": "tsunami-struck area",
    "earthquake": "earthquake-damaged area",
    "volcano": "ash-covered area",
}
_DISASTER_R2 = {
    "hurricane": "hurricane-affected region",
    "wildfire": "fire-affected region",
    "flood": "flood-affected region",
    "tsunami": "tsunami-affected region",
    "earthquake": "seismic damage",
    "volcano": "volcanic eruption aftermath",
}

XVIEW_PHRASINGS = ("plain", "r1", "r2")


def _phrase_disaster(disaster: str, phrasing: str) -> str:
    plain = DISASTER_MODIFIERS.get(disaster, f"post-{disaster}")
    if phrasing == "plain":
        return plain
    if phrasing == "r1":
        return _DISASTER_R1.get(disaster, plain)
    if phrasing == "r2":
        return _DISASTER_R2.get(disaster, plain)
    raise ExtractError(f"unknown disaster phrasing {phrasing!r}")


def build_patterncom_manifest(
    annotations: Sequence[dict], phrasing: str = "plain"
) -> tuple[list[dict], list[dict]]:
    """Derive (manifest records, label records) from class/attribute annotations.

    Input records: {"image_id", "class", "attributes": {attr_type: value}}.
    For each (class, attribute type, target value), queries are the images
    of that class annotated with a different value for the same type.
    Images without annotations are reported and excluded.
    """
    labels: list[dict] = []
    by_class_attr: dict[tuple[str, str], list[tuple[str, str]]] = {}
    seen: set[str] = set()
    unannotated: list[str] = []
    for rec in annotations:
        image_id = rec["image_id"]
        if image_id in seen:
            raise ExtractError(f"duplicate annotation for image {image_id!r}")
        seen.add(image_id)
        attributes = dict(rec.get("attributes") or {})
        class_label = rec.get("class")
        if not class_label or not attributes:
            unannotated.append(image_id)
            continue
        labels.append(
            {"image_id": image_id, "class_label": class_label, "attributes": attributes}
        )
        for attr, value in attributes.items():
            by_class_attr.setdefault((class_label, attr), []).append((image_id, value))
    if unannotated:
        log.warning("%d images lack class or attribute annotations", len(unannotated))

    manifest: list[dict] = []
    for (class_label, attr), members in sorted(by_class_attr.items(), key=lambda kv: (kv[0][1], kv[0][0])):
        values = sorted({value for _, value in members})
        for target in values:
            for image_id, own_value in sorted(members):
                if own_value == target:
                    continue
                manifest.append(
                    {
                        "query_id": f"{image_id}:{attr}:{target}",
                        "image_id": image_id,
                        "modifier": _phrase_attribute(target, attr, phrasing),
                        "group": attr,
                        "target_value": target,
                        "protocol": "class_attribute",
                        "pool": "all_except_query",
                    }
                )
    labels.sort(key=lambda rec: rec["image_id"])
    return manifest, labels


def build_xview2cir_manifest(
    events: Sequence[dict], phrasing: str = "plain"
) -> tuple[list[dict], list[dict], list[dict]]:
    """Derive (manifest, labels, skipped) from pre/post event pairs.

    Input records: {"scene_id", "disaster", "pre_image_id", "post_image_id"}.
    One query per pre-event image; the unique positive is the paired
    post-event image, targeted through the canonical post-event state.
    Unpaired scenes are skipped and reported.
    """
    manifest: list[dict] = []
    labels: list[dict] = []
    skipped: list[dict] = []
    seen_scenes: set[str] = set()
    for rec in sorted(events, key=lambda r: str(r.get("scene_id"))):
        scene = rec.get("scene_id")
        disaster = rec.get("disaster")
        pre_id = rec.get("pre_image_id")
        post_id = rec.get("post_image_id")
        if not scene or not disaster or not pre_id or not post_id:
            skipped.append(dict(rec))
            continue
        if scene in seen_scenes:
            raise ExtractError(f"duplicate scene {scene!r} in event metadata")
        seen_scenes.add(scene)
        state = DISASTER_MODIFIERS.get(disaster, f"post-{disaster}")
        labels.append({"image_id": pre_id, "scene_id": scene, "state": "pre_event"})
        labels.append({"image_id": post_id, "scene_id": scene, "state": state})
        manifest.append(
            {
                "query_id": f"{pre_id}:{state}",
                "image_id": pre_id,
                "modifier": _phrase_disaster(disaster, phrasing),
                "group": disaster,
                "target_value": state,
                "protocol": "scene_state",
                "pool": "post_event_only",
            }
        )
    if skipped:
        log.warning("%d events lack a pre/post pairing; skipped", len(skipped))
    labels.sort(key=lambda rec: rec["image_id"])
    return manifest, labels, skipped
