"""Two-agent intent analysis over detected tamper regions.

Agent 1 (mask refinement) looks at the suspect image with detected areas
outlined in green, filters noise, and names the chart component under each
confirmed region. Agent 2 (intent analysis) maps each component to a
tampering method through a fixed rule table, then writes a one-sentence
account of the manipulation and the motive behind it.

Both agents are driven by frozen prompt templates; the template text is the
wire format and must not be reworded. Backends are pluggable: anything with
a ``complete(images, prompt) -> text`` method works, including the
deterministic local mocks used for hermetic runs.
"""

import base64
import enum
import io
import json
import os
import re
import threading
import time
from dataclasses import dataclass, field

import numpy as np

from .errors import (
    AnalysisError,
    PromptParseError,
    SchemaValidationError,
    TransportError,
)
from .image import GREEN_OUTLINE, render_overlay, to_uint8


class ComponentLabel(enum.Enum):
    """The seven chart components the refinement agent may name."""

    AXIS = "axis"
    DATA_LABELS = "data labels"
    LEGEND = "legend"
    COLORMAP = "colormap"
    REGION = "region"
    LOGO = "logo"
    ANNOTATION = "annotation"


class TamperMethod(enum.Enum):
    """Nine manipulation methods plus the catch-all, keyed by abbreviation.

    Values are the display names used on the wire; reports carry these
    strings, never the abbreviations.
    """

    MDV = "Modifying data point values"
    ARD = "Adding or removing data points"
    MCV = "Modifying coordinate values"
    DAA = "Deceptive auxiliary annotations"
    ML = "Modifying the legend"
    HL = "Hiding labels"
    ARL = "Adding or removing logos"
    DVD = "Data-visual disproportion"
    MC = "Modifying the colormap"
    OTHERS = "Others"


_COMPONENT_BY_NAME = {c.value: c for c in ComponentLabel}
_METHOD_BY_NAME = {m.value.lower(): m for m in TamperMethod}


@dataclass(frozen=True)
class MappingRule:
    component: "ComponentLabel"
    primary_methods: tuple
    secondary_methods: tuple = ()

    @property
    def reachable(self):
        return self.primary_methods + self.secondary_methods


_RULES = {
    ComponentLabel.REGION: MappingRule(
        ComponentLabel.REGION,
        (TamperMethod.MDV, TamperMethod.ARD, TamperMethod.DVD),
        (TamperMethod.MC,),
    ),
    ComponentLabel.DATA_LABELS: MappingRule(
        ComponentLabel.DATA_LABELS,
        (TamperMethod.MDV, TamperMethod.HL),
        (TamperMethod.ARD, TamperMethod.DVD),
    ),
    ComponentLabel.AXIS: MappingRule(
        ComponentLabel.AXIS, (TamperMethod.MCV,), (TamperMethod.HL,)
    ),
    ComponentLabel.LEGEND: MappingRule(ComponentLabel.LEGEND, (TamperMethod.ML,)),
    ComponentLabel.ANNOTATION: MappingRule(
        ComponentLabel.ANNOTATION, (TamperMethod.DAA,)
    ),
    ComponentLabel.LOGO: MappingRule(ComponentLabel.LOGO, (TamperMethod.ARL,)),
    ComponentLabel.COLORMAP: MappingRule(
        ComponentLabel.COLORMAP, (TamperMethod.MC,)
    ),
}


def rule_lookup(component):
    """Return the MappingRule for a component. Total over all seven."""
    return _RULES[ComponentLabel(component)]


@dataclass
class RefinedRegion:
    """One confirmed region from the refinement agent."""

    tampered_region: str
    tampered_component: list
    reason: str

    def to_json_obj(self):
        return {
            "tampered_region": self.tampered_region,
            "tampered_component": [c.value for c in self.tampered_component],
            "reason": self.reason,
        }


@dataclass
class IntentEntry:
    tampered_region: str
    method: "TamperMethod"
    tamper: str
    intent: str
    conformant: bool = True

    def to_json_obj(self):
        obj = {
            "tampered_region": self.tampered_region,
            "method": self.method.value,
            "tamper": self.tamper,
            "intent": self.intent,
        }
        if not self.conformant:
            obj["non_conformant"] = True
        return obj


@dataclass
class IntentReport:
    entries: list = field(default_factory=list)

    def to_json_obj(self):
        return {"tampering_intents": [e.to_json_obj() for e in self.entries]}

    def to_json(self):
        return json.dumps(self.to_json_obj(), indent=2)


_HR = "-" * 72

# Frozen wire format below, quirks and all. Do not edit the template text.
REFINEMENT_PROMPT_TEMPLATE = f"""**Task Context**
{_HR}

You are an expert in computer vision. Given a tampered chart image, and we have detected the tampered areas and marked them with green lines.
You should provide the refined tampered regions and components as output, considering the principles provided.
The components to consider are:

  - `axis`
  - `data labels`
  - `legend`
  - `colormap`
  - `region`
  - `logo`
  - `annotation`

**Data Input**
{_HR}

Tampered Visualization Image with Visual Prmopt: {{chart_img_path}}

**Chain-of-Thought**
{_HR}

Your reasoning should retain only confirmed information. Here is a potential checklist for inferring the tampering area:
1. Analyze the overall information conveyed by the visualization.
2. Identify the areas surrounded by green lines, which indicate potential tampering regions.
3. Filter out noise from the highlighted areas and determine where meaningful tampering has actually occurred.
3. Determine the tampering regions and corresponding components.

**Principles**
{_HR}

To filter out noise, you may refer to the three principles:

- **Area Analysis**: Prioritize highlighting sufficiently large areas and filter out minor areas along the background or edges that are likely noise. When you find a very small highlighted area on a relatively large color block, shape, or text, it is highly likely to be noise.

- **Shape Analysis**: For highlighted visual elements, focus on regular shapes (e.g., rectangles or circles) to detect potential tampering and disregard irregular shapes that suggest noise.

- **Edge Analysis**: Except for text modifications, the highlighted tampered areas should have smooth edges and fully cover the manipulated regions.

**Output Format**
{_HR}

Return the output in this strict format:
```json
{{
  "tampered_regions": [
    {{
      "tampered_region": "<tampered region>",
      "tampered_component": ["<tampered component 1>", "<tampered component 2>", ...]
      "reason": "reason for tampered region"
    }},
    ...
  ]
}}
```
"""

INTENT_PROMPT_TEMPLATE = f"""**Task Context**
{_HR}

You are an expert in visual analytics. Given the refined tampered regions identified from a tampered visualization image, you need to interpret and analyze the tampering intent behind these regions.
You should provide a detailed analysis of the tampering intent, including the types of manipulations and their potential misleading effects.

**Data Input**
{_HR}

Tampered Visualization Image with Visual Prompt: {{chart_img_path}}
Textual Prompt of Tampered Region: {{tampered_region_json}}

**Component-to-Method Mapping Rules**
{_HR}

For a given tampering_component, you must For a given `tampering_component`, you must evaluate the Primary Methods first. Only if none of the primary methods accurately describe the manipulation should you consider the Secondary Methods.

- If `tampering_component` is **"region"**:
  - **Primary Methods:** `Modifying data point values`, `Adding or removing data points`, `Data-visual disproportion`
  - **Secondary Methods:** `Modifying the colormap`
- If `tampering_component` is **"data labels"**:
  - **Primary Methods:** `Modifying data point values`, `Hiding labels`
  - **Secondary Methods:** `Adding or removing data points`, `Data-visual disproportion`
- If `tampering_component` is **"axis"**:
  - **Primary Methods:** `Modifying coordinate values`
  - **Secondary Methods:** `Hiding labels`
- If `tampering_component` is **"legend"**:
  - **Primary Method:** `Modifying the legend`
- If `tampering_component` is **"annotation"**:
  - **Primary Method:** `Deceptive auxiliary annotations`
- If `tampering_component` is **"logo"**:
  - **Primary Method:** `Adding or removing logos`
- If `tampering_component` is **"colormap"**:
  - **Primary Method:** `Modifying the colormap`

**Chain-of-Thought**
{_HR}

Let’s think step by step about the tampering intent. Here is a potential checklist for inferring the tampering intent:

1. Understand the context and a full understanding of the input
2. For each tampered region, first identify its `tampering_component` from the input. Then, using the **Component-to-Method Mapping Rules** above, select the most fitting `method`. Remember to check Primary Methods before Secondary ones.
3. Based on your analysis, provide a simple description of the tampering process (`tamper`) in one sentence — how the original image was tampered to become the current version. For example: "Increase the population value of England from 53 million to 60 million and decrease the population value of Scotland from 5.2 million to 4 million.", "Remove the data points for feeling hopeful about the future"
4. Infer the `intent` based on the primary message conveyed by the chart and the identified tampered areas.

**Principles**
{_HR}

To infer the tampering intents, you may refer to these common tampering types:

- **Modifying data point values**: Changing the quantitative value of an existing data point, which alters its visual representation (e.g., making a bar taller/shorter, moving a point up/down, changing the height of a line segment, or altering the boundary of an area). Crucially, in this method, the visual element is consistently updated to accurately reflect the new (modified) data point value. The visual element representing the data point remains present on the chart, but its specific value has been changed.
- **Adding or removing data points**: Introducing entirely new data points (and their corresponding visual elements) or completely deleting existing data points (and their corresponding visual elements). This results in visual elements appearing or disappearing from the chart, rather than just changing their existing properties.
- **Modifying coordinate values**: Changing the values or textual labels of x-axis or y-axis to alter their position in the chart.
- **Deceptive auxiliary annotations**: Using misleading annotations (e.g., clustering boxes, guide lines, arrows) to create a false impression.
- **Modifying the legend**: Changing the legend’s content, colors, or order to mislead viewers about what the data represents.
- **Hiding labels**: Removing data labels near data points (e.g., scatter, point, etc.) to obscure the true meaning of the data.
- **Adding or removing logos**: Inserting or deleting logos to mislead viewers about the data source.
- **Data-visual disproportion**: Making the visual representation of data inconsistent with the actual values. This occurs when the visual element (e.g., bar length, area size) does not accurately correspond to its stated numerical value, or when one is modified without the other being consistently updated, creating a mismatch.
- **Modifying the colormap**: Adjusting the color mapping (including legend, data points, and their background colors) to distort the perception of data distribution, or introducing inconsistent colors to mislead.
- **Others**: Any other tampering method that is not included in the above types.

**Output Format**
{_HR}

Return in JSON format with the following structure:
```json
{{ "tampering_intents": [
    {{
      "tampered_region": "<tampered region>",
      "method": "<Tampering Method>",
      "tamper": "<Tampering Process>",
      "intent": "<Tampering Intent>"
    }},...]}}
```
"""


def build_refinement_prompt(image_ref, cfg=None):
    """Fill the refinement template. Pure text function."""
    return REFINEMENT_PROMPT_TEMPLATE.replace("{chart_img_path}", str(image_ref))


def build_intent_prompt(image_ref, refined):
    """Fill the intent template with the serialized refined regions."""
    if not refined:
        raise ValueError("refined regions must be non-empty")
    payload = json.dumps(
        {"tampered_regions": [r.to_json_obj() for r in refined]}, indent=2
    )
    out = INTENT_PROMPT_TEMPLATE.replace("{chart_img_path}", str(image_ref))
    return out.replace("{tampered_region_json}", payload)


_FENCE_RE = re.compile(r"```(?:json)?\s*\n(.*?)```", re.DOTALL)


def _extract_json(response):
    m = _FENCE_RE.search(response)
    if m is None:
        raise PromptParseError("no fenced JSON block in backend response")
    try:
        return json.loads(m.group(1))
    except json.JSONDecodeError as e:
        raise PromptParseError(f"fenced block is not valid JSON: {e}") from e


def _require(obj, key, path, kind):
    if not isinstance(obj, dict) or key not in obj:
        raise SchemaValidationError(f"missing required key at {path}.{key}",
                                    field_path=f"{path}.{key}")
    val = obj[key]
    if not isinstance(val, kind):
        raise SchemaValidationError(
            f"{path}.{key} must be {kind.__name__}, got {type(val).__name__}",
            field_path=f"{path}.{key}")
    return val


def _parse_refinement(payload):
    regions = _require(payload, "tampered_regions", "$", list)
    out = []
    for i, rec in enumerate(regions):
        path = f"tampered_regions[{i}]"
        text = _require(rec, "tampered_region", path, str)
        comps_raw = _require(rec, "tampered_component", path, list)
        reason = _require(rec, "reason", path, str)
        comps = []
        for j, name in enumerate(comps_raw):
            key = str(name).strip().lower()
            if key not in _COMPONENT_BY_NAME:
                raise SchemaValidationError(
                    f"unknown component {name!r} at {path}.tampered_component[{j}]",
                    field_path=f"{path}.tampered_component[{j}]")
            comps.append(_COMPONENT_BY_NAME[key])
        if not comps:
            raise SchemaValidationError(
                f"empty component list at {path}.tampered_component",
                field_path=f"{path}.tampered_component")
        out.append(RefinedRegion(text, comps, reason))
    return out


def _parse_intent(payload):
    entries = _require(payload, "tampering_intents", "$", list)
    out = []
    for i, rec in enumerate(entries):
        path = f"tampering_intents[{i}]"
        text = _require(rec, "tampered_region", path, str)
        method_name = _require(rec, "method", path, str)
        tamper = _require(rec, "tamper", path, str)
        intent_text = _require(rec, "intent", path, str)
        key = method_name.strip().lower()
        if key not in _METHOD_BY_NAME:
            raise SchemaValidationError(
                f"unknown method {method_name!r} at {path}.method",
                field_path=f"{path}.method")
        out.append(IntentEntry(text, _METHOD_BY_NAME[key], tamper, intent_text))
    return IntentReport(out)


def parse_and_validate(response, schema):
    """Extract the first fenced JSON block and validate it.

    schema is "refinement" or "intent". Unknown component or method strings
    raise SchemaValidationError rather than degrading to the catch-all.
    """
    payload = _extract_json(response)
    if schema == "refinement":
        return _parse_refinement(payload)
    if schema == "intent":
        return _parse_intent(payload)
    raise ValueError(f"unknown schema {schema!r}")


_REASK_SUFFIX = (
    "\n\nYour previous response failed validation: {err}\n"
    "Return only the corrected JSON block in the required format."
)


def _ask(backend, images, prompt, schema):
    # one structured re-ask with the validation error, then give up
    resp = backend.complete(images, prompt)
    try:
        return parse_and_validate(resp, schema)
    except (PromptParseError, SchemaValidationError) as first:
        retry = prompt + _REASK_SUFFIX.format(err=first)
        resp = backend.complete(images, retry)
        try:
            return parse_and_validate(resp, schema)
        except (PromptParseError, SchemaValidationError) as second:
            raise AnalysisError(
                f"backend response failed {schema} validation twice: {second}"
            ) from second


def _reachable_methods(components):
    methods = []
    for c in components:
        for m in rule_lookup(c).reachable:
            if m not in methods:
                methods.append(m)
    return methods


def analyze(backend, suspect, regions, cfg=None, image_ref="overlay.png"):
    """Run the two-agent chain over detected regions.

    Returns an IntentReport. Entries whose method is not reachable from the
    refined component under the rule table keep the backend's answer but are
    flagged non-conformant rather than silently corrected.
    """
    if not regions:
        return IntentReport([])
    overlay = render_overlay(suspect, regions, GREEN_OUTLINE)
    refined = _ask(backend, [overlay], build_refinement_prompt(image_ref, cfg),
                   "refinement")
    if not refined:
        return IntentReport([])
    report = _ask(backend, [overlay], build_intent_prompt(image_ref, refined),
                  "intent")
    by_text = {r.tampered_region: r for r in refined}
    for idx, entry in enumerate(report.entries):
        match = by_text.get(entry.tampered_region)
        if match is None and idx < len(refined):
            match = refined[idx]
        if match is None:
            entry.conformant = False
            continue
        entry.conformant = entry.method in _reachable_methods(
            match.tampered_component)
    return report


# --- backends ---------------------------------------------------------------


def _png_b64(img):
    from PIL import Image

    buf = io.BytesIO()
    Image.fromarray(to_uint8(img)).save(buf, format="PNG")
    return base64.b64encode(buf.getvalue()).decode("ascii")


class HttpBackend:
    """POST (prompt + base64 PNGs) to a vendor-neutral endpoint.

    The endpoint must answer with JSON {"text": ...} or a raw text body.
    Authentication comes only from the VIZMARK_API_TOKEN environment
    variable; there is no token argument on purpose.
    """

    def __init__(self, endpoint, timeout=60.0, retries=2, max_in_flight=4):
        if retries < 0:
            raise ValueError("retries must be >= 0")
        self.endpoint = endpoint
        self.timeout = float(timeout)
        self.retries = int(retries)
        self.max_in_flight = int(max_in_flight)
        self._gate = threading.BoundedSemaphore(self.max_in_flight)

    def complete(self, images, prompt):
        import requests

        body = {"prompt": prompt, "images": [_png_b64(im) for im in images]}
        headers = {"Content-Type": "application/json"}
        token = os.environ.get("VIZMARK_API_TOKEN", "")
        if token:
            headers["Authorization"] = f"Bearer {token}"
        last = None
        for attempt in range(self.retries + 1):
            try:
                with self._gate:
                    r = requests.post(self.endpoint, json=body,
                                      headers=headers, timeout=self.timeout)
                r.raise_for_status()
                try:
                    return r.json()["text"]
                except (ValueError, KeyError):
                    return r.text
            except requests.RequestException as e:
                last = e
                if attempt < self.retries:
                    time.sleep(2.0 ** attempt)
        raise TransportError(
            f"backend at {self.endpoint} failed after "
            f"{self.retries + 1} attempts: {last}")


def _fence(obj):
    return "```json\n" + json.dumps(obj, indent=2) + "\n```"


def _bbox_of_refined_text(text):
    m = re.search(r"x=(\d+)\.\.(\d+), y=(\d+)\.\.(\d+)", text)
    if m is None:
        return None
    x0, x1, y0, y1 = map(int, m.groups())
    return (x0, y0, x1, y1)


class _GeometricMock:
    """Classifies green-outlined boxes by where they sit on the canvas.

    Bottom strip (lowest 15%) reads as axis, a right-strip box overlapping
    the standard legend corner reads as legend, anything else as region.
    The method is always the first primary rule for that component, so the
    output is schema-valid and rule-conformant by construction.
    """

    def complete(self, images, prompt):
        if "tampering_intents" in prompt:
            return self._intent(prompt)
        return self._refine(images[0])

    def _green_boxes(self, overlay):
        from scipy import ndimage

        g = ((overlay[:, :, 1] == 1.0)
             & (overlay[:, :, 0] == 0.0)
             & (overlay[:, :, 2] == 0.0))
        labels, n = ndimage.label(g, structure=np.ones((3, 3), dtype=int))
        boxes = []
        for sl in ndimage.find_objects(labels):
            y0, y1 = sl[0].start, sl[0].stop - 1
            x0, x1 = sl[1].start, sl[1].stop - 1
            boxes.append((x0, y0, x1, y1))
        boxes.sort(key=lambda b: (b[1], b[0]))
        return boxes

    def _classify(self, box, h, w):
        from .chartgen import chart_layout

        x0, y0, x1, y1 = box
        cy = 0.5 * (y0 + y1)
        cx = 0.5 * (x0 + x1)
        if cy >= 0.85 * h:
            return ComponentLabel.AXIS
        lx0, ly0, lx1, ly1 = chart_layout(h, w)["legend"]
        overlaps = not (x1 < lx0 or x0 > lx1 or y1 < ly0 or y0 > ly1)
        if cx >= 0.80 * w and overlaps:
            return ComponentLabel.LEGEND
        return ComponentLabel.REGION

    def _refine(self, overlay):
        h, w = overlay.shape[:2]
        recs = []
        for box in self._green_boxes(overlay):
            comp = self._classify(box, h, w)
            x0, y0, x1, y1 = box
            recs.append({
                "tampered_region": f"box x={x0}..{x1}, y={y0}..{y1}",
                "tampered_component": [comp.value],
                "reason": f"green outline encloses a {comp.value} area",
            })
        return _fence({"tampered_regions": recs})

    def _intent(self, prompt):
        refined = _refined_from_prompt(prompt)
        entries = []
        for rec in refined:
            comp = ComponentLabel(rec["tampered_component"][0])
            method = rule_lookup(comp).primary_methods[0]
            entries.append({
                "tampered_region": rec["tampered_region"],
                "method": method.value,
                "tamper": f"Altered the {comp.value} inside "
                          f"{rec['tampered_region']}.",
                "intent": "Shift the reading of the chart in that area.",
            })
        return _fence({"tampering_intents": entries})


def _refined_from_prompt(prompt):
    head = prompt.split("Textual Prompt of Tampered Region: ", 1)[1]
    body = head.split("\n\n**Component-to-Method Mapping Rules**", 1)[0]
    return json.loads(body)["tampered_regions"]


class _TruthMock:
    """Answers straight from a corpus manifest entry's recorded ops."""

    def __init__(self, item):
        self.ops = list(item["ops"])

    def complete(self, images, prompt):
        if "tampering_intents" in prompt:
            entries = [{
                "tampered_region": op["region"],
                "method": TamperMethod[op["method"]].value,
                "tamper": op["tamper"],
                "intent": op["intent"],
            } for op in self.ops]
            return _fence({"tampering_intents": entries})
        recs = [{
            "tampered_region": op["region"],
            "tampered_component": [op["component"]],
            "reason": "recorded ground truth",
        } for op in self.ops]
        return _fence({"tampered_regions": recs})


def mock_backend(truth=None):
    """Deterministic local backend for hermetic runs.

    With a manifest item, answers echo its recorded labels; without one,
    regions are classified geometrically and the first primary method is
    chosen. Either way the output always parses and validates.
    """
    if truth is not None:
        return _TruthMock(truth)
    return _GeometricMock()
