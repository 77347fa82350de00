"""Instruction template grammars.

Each task direction gets a small combinatorial grammar (slots x skeletons)
whose enumerable form count is known in closed form. Two disjoint phrasing
families ("a" and "b") are shipped so that held-out-phrasing evaluation can
swap families without touching pixels. Parameter slots (``color``,
``category``, ``weather``) share their alternative pools across families and
directions, which lets the dataset builder pin them to the values a transform
actually used.
"""

from __future__ import annotations

import functools
import itertools
import random
import re
from dataclasses import dataclass, field

from .tasks import CATEGORY_REGISTRY, Direction, TaskKind


class GrammarError(ValueError):
    pass


class GrammarParseError(GrammarError):
    def __init__(self, message: str, line: int, column: int = 1):
        super().__init__(f"line {line}, column {column}: {message}")
        self.line = line
        self.column = column


class EmptyAlternativeError(GrammarError):
    pass


class UndefinedSlotError(GrammarError):
    pass


class UndefinedSkeletonError(GrammarError):
    pass


class TaskMismatchError(GrammarError):
    pass


_SLOT_RE = re.compile(r"\{([A-Za-z_][A-Za-z0-9_]*)\}")

# Slot values carried from the forward sample into the inverse sample so both
# sides of a pair talk about the same color/category/weather.
PARAM_SLOTS = frozenset({"color", "category", "weather"})


@dataclass(frozen=True)
class TemplateGrammar:
    task: TaskKind
    direction: Direction
    slots: dict[str, tuple[str, ...]]
    skeletons: tuple[str, ...]

    def referenced_slots(self, skeleton: str) -> list[str]:
        seen: list[str] = []
        for name in _SLOT_RE.findall(skeleton):
            if name not in seen:
                seen.append(name)
        return seen

    @property
    def form_count(self) -> int:
        total = 0
        for skeleton in self.skeletons:
            count = 1
            for name in self.referenced_slots(skeleton):
                count *= len(self.slots[name])
            total += count
        return total


@dataclass(frozen=True)
class InstructionPair:
    forward_text: str
    inverse_text: str
    task: TaskKind

    def __post_init__(self):
        if not self.forward_text or not self.inverse_text:
            raise GrammarError("instruction texts must be non-empty")
        if self.forward_text == self.inverse_text:
            raise GrammarError("forward and inverse texts must differ")


def compile_grammar(task: TaskKind, source: str,
                    direction: Direction = Direction.FORWARD) -> TemplateGrammar:
    """Parse grammar-definition text (one directive per line) and validate."""
    slots: dict[str, tuple[str, ...]] = {}
    skeletons: list[str] = []
    for lineno, raw in enumerate(source.splitlines(), 1):
        line = raw.strip()
        if not line or line.startswith("#"):
            continue
        if line.startswith("slot "):
            rest = line[len("slot "):]
            if "=" not in rest:
                raise GrammarParseError("slot directive needs '='", lineno, len(raw))
            name, _, alts_text = rest.partition("=")
            name = name.strip()
            if not re.fullmatch(r"[A-Za-z_][A-Za-z0-9_]*", name):
                raise GrammarParseError(f"bad slot name {name!r}", lineno, raw.find(name) + 1)
            if name in slots:
                raise GrammarParseError(f"duplicate slot {name!r}", lineno)
            alternatives = tuple(a.strip() for a in alts_text.split("|"))
            for alt in alternatives:
                if not alt:
                    raise EmptyAlternativeError(
                        f"line {lineno}: slot {name!r} has an empty alternative")
            if len(set(alternatives)) != len(alternatives):
                raise GrammarParseError(f"duplicate alternative in slot {name!r}", lineno)
            slots[name] = alternatives
        elif line.startswith("skeleton"):
            rest = line[len("skeleton"):].lstrip()
            if not rest.startswith("="):
                raise GrammarParseError("skeleton directive needs '='", lineno, len(raw))
            body = rest[1:].strip()
            if len(body) < 2 or body[0] != '"' or body[-1] != '"':
                raise GrammarParseError("skeleton text must be double-quoted", lineno,
                                        raw.find("=") + 2)
            text = body[1:-1]
            if text in skeletons:
                raise GrammarParseError("duplicate skeleton", lineno)
            skeletons.append(text)
        else:
            raise GrammarParseError(f"unknown directive: {line.split()[0]!r}", lineno)
    if not skeletons:
        raise UndefinedSkeletonError("grammar defines no skeletons")
    grammar = TemplateGrammar(task, direction, slots, tuple(skeletons))
    for skeleton in skeletons:
        for name in grammar.referenced_slots(skeleton):
            if name not in slots:
                raise UndefinedSlotError(f"skeleton references undefined slot {name!r}")
    return grammar


def _render(skeleton: str, assignment: dict[str, str]) -> str:
    return _SLOT_RE.sub(lambda m: assignment[m.group(1)], skeleton)


def sample_form(g: TemplateGrammar, rng: random.Random,
                pinned: dict[str, str] | None = None) -> tuple[str, dict[str, str]]:
    """One uniformly sampled form, honoring pinned slot values."""
    skeleton = g.skeletons[rng.randrange(len(g.skeletons))]
    assignment: dict[str, str] = {}
    for name in g.referenced_slots(skeleton):
        if pinned and name in pinned:
            value = pinned[name]
            if value not in g.slots[name]:
                raise GrammarError(
                    f"pinned value {value!r} not an alternative of slot {name!r}")
        else:
            alternatives = g.slots[name]
            value = alternatives[rng.randrange(len(alternatives))]
        assignment[name] = value
    return _render(skeleton, assignment), assignment


def sample_instruction_pair(g_fwd: TemplateGrammar, g_inv: TemplateGrammar, seed: int,
                            bindings: dict[str, str] | None = None) -> InstructionPair:
    """Deterministically sample a bidirectional pair; shared parameter slots
    take the same value on both sides."""
    if g_fwd.task is not g_inv.task:
        raise TaskMismatchError(f"task mismatch: {g_fwd.task} vs {g_inv.task}")
    rng = random.Random(seed)
    pinned = dict(bindings or {})
    fwd_text, fwd_assign = sample_form(g_fwd, rng, pinned=pinned)
    carry = dict(pinned)
    for name in PARAM_SLOTS:
        if name in fwd_assign:
            carry[name] = fwd_assign[name]
    inv_pinned = {k: v for k, v in carry.items() if k in g_inv.slots}
    for _ in range(16):
        inv_text, _ = sample_form(g_inv, rng, pinned=inv_pinned)
        if inv_text != fwd_text:
            return InstructionPair(fwd_text, inv_text, g_fwd.task)
    raise GrammarError("could not sample distinct forward/inverse texts")


def enumerate_forms(g: TemplateGrammar, limit: int) -> list[str]:
    """First `limit` forms in canonical order: lexicographic over
    (skeleton index, slot assignment indices), last slot fastest."""
    if limit < 1:
        raise ValueError("limit must be >= 1")
    out: list[str] = []
    for skeleton in g.skeletons:
        names = g.referenced_slots(skeleton)
        pools = [g.slots[name] for name in names]
        for combo in itertools.product(*pools):
            out.append(_render(skeleton, dict(zip(names, combo))))
            if len(out) >= limit:
                return out
    return out


# --- annotation prompt payloads ---------------------------------------------

KEY_A_TO_B = "Task_Descriptions_from_A_to_B"
KEY_B_TO_A = "Task_Descriptions_from_B_to_A"
KEY_CAPTION_A = "Image_A_Caption"
KEY_CAPTION_B = "Image_B_Caption"

NO_TOOLS_CLAUSE = ("The task descriptions should not use any additional tools or "
                   "references, such as image editing tools.")
NO_IMAGE_REFS_CLAUSE = ("Do not use terms like 'image A', 'image B', "
                        "'to transform * into *', or similar phrases.")

SYSTEM_TEXT = ("You are a meticulous visual analyst with exceptional attention to "
               "detail. Given a pair of images, you describe precisely how elements "
               "appear, disappear, or change between them, thoroughly and accurately.")

DOMAIN_HINTS: dict[TaskKind, str] = {
    TaskKind.EDGE: "boundary extraction and rebuilding images from outlines",
    TaskKind.DEPTH: "distance estimation and rebuilding images from range maps",
    TaskKind.SURFACE_NORMAL: "surface orientation mapping and its inversion",
    TaskKind.SEGMENTATION: "painting object categories with solid colors and undoing it",
    TaskKind.DETECTION: "marking objects with bounding boxes and removing the markers",
    TaskKind.DERAIN: "removing and adding rain streaks",
    TaskKind.DEHAZE: "removing and adding haze",
    TaskKind.DESNOW: "removing and adding snowfall",
    TaskKind.LOWLIGHT: "brightening underexposed photos and dimming them",
    TaskKind.BLUR: "sharpening defocused photos and defocusing them",
    TaskKind.COMPOSITIONAL_EDIT: "applying small chained edits to a scene and reversing them",
}


@dataclass(frozen=True)
class AnnotationPrompt:
    system_text: str
    user_text: str
    required_json_keys: tuple[str, ...]
    constraints: tuple[str, ...]

    def __post_init__(self):
        if KEY_A_TO_B not in self.required_json_keys or KEY_B_TO_A not in self.required_json_keys:
            raise ValueError("both transformation-description keys are required")
        blob = " ".join(self.constraints)
        if "image A" not in blob or "image B" not in blob:
            raise ValueError("constraints must forbid the phrases 'image A' and 'image B'")

    def to_json_dict(self) -> dict:
        return {
            "system": self.system_text,
            "user": self.user_text,
            "required_keys": list(self.required_json_keys),
            "constraints": list(self.constraints),
        }


def build_annotation_prompt(pair_kind: TaskKind, include_captions: bool,
                            include_domain_hint: bool) -> AnnotationPrompt:
    """Assemble the JSON-mode prompt payload for a pair-annotation request."""
    keys: list[str] = []
    if include_captions:
        keys += [KEY_CAPTION_A, KEY_CAPTION_B]
    keys += [KEY_A_TO_B, KEY_B_TO_A]

    parts: list[str] = []
    if include_domain_hint:
        parts.append(f"We are currently working on tasks related to {DOMAIN_HINTS[pair_kind]}.")
    parts.append("Define the first image as A, the second image as B.")
    task_items: list[str] = []
    if include_captions:
        task_items.append("1) Describe these images.")
    task_items.append(
        "2) Describe 2 scenarios: how to transform image A into image B, and image B "
        "into image A, without referencing the contents of the other image directly.")
    parts.append("Task: " + " ".join(task_items))
    parts.append(
        "Output format: JSON format with keys only contain "
        + ", ".join(keys)
        + " without any nested JSON structures. The descriptions of transformations "
        "should be as diverse as possible, either as a single paragraph or as a "
        "step-by-step description.")
    parts.append(f"Constraints: 1) {NO_TOOLS_CLAUSE} 2) {NO_IMAGE_REFS_CLAUSE}")
    return AnnotationPrompt(
        system_text=SYSTEM_TEXT,
        user_text=" ".join(parts),
        required_json_keys=tuple(keys),
        constraints=(NO_TOOLS_CLAUSE, NO_IMAGE_REFS_CLAUSE),
    )


# --- builtin grammar sources --------------------------------------------------

PALETTE: tuple[str, ...] = (
    "aqua", "chartreuse", "coral", "crimson", "darkolivegreen", "darkorange",
    "deeppink", "dodgerblue", "firebrick", "floralwhite", "gold", "hotpink",
    "indigo", "lawngreen", "lightsalmon", "linen", "magenta", "olive", "orchid",
    "purple", "royalblue", "teal", "tomato", "turquoise",
)

_CATEGORY_SLOT = "slot category = " + " | ".join(CATEGORY_REGISTRY)
_COLOR_SLOT = "slot color = " + " | ".join(PALETTE)
_WEATHER_SLOT = "slot weather = haze | rain | snow"


def _src(text: str) -> str:
    return (text.replace("@CATEGORY@", _CATEGORY_SLOT)
                .replace("@COLOR@", _COLOR_SLOT)
                .replace("@WEATHER@", _WEATHER_SLOT))


_SOURCES: dict[tuple[TaskKind, Direction, str], str] = {}


def _register(task: TaskKind, direction: Direction, family: str, text: str) -> None:
    _SOURCES[(task, direction, family)] = _src(text)


_register(TaskKind.SEGMENTATION, Direction.FORWARD, "a", """
slot verb = Paint | Cover | Coat | Mask
slot quant = every | each | any
@CATEGORY@
@COLOR@
slot tail = , covering it completely | , hiding the original surface | , so no original texture remains | , leaving a single flat tone
skeleton = "{verb} {quant} {category} object with a solid {color} overlay{tail}."
skeleton = "Apply a flat {color} fill to {quant} {category} object in the scene{tail}."
""")

_register(TaskKind.SEGMENTATION, Direction.INVERSE, "a", """
slot verb = Erase | Remove | Strip | Lift
@CATEGORY@
@COLOR@
slot tail = , restoring their original appearance | , bringing back the underlying colors | , so the original surfaces show again | , recovering the covered details
skeleton = "{verb} the {color} overlay from the {category} objects{tail}."
skeleton = "Dissolve the flat {color} paint covering the {category} objects{tail}."
""")

_register(TaskKind.SEGMENTATION, Direction.FORWARD, "b", """
slot verb = Spread | Lay | Press | Brush
slot quant = every | each | any
@CATEGORY@
@COLOR@
slot tail = , so it ends up covered completely | , hiding every bit of the original surface | , so none of its original texture remains | , leaving it one single flat tone
skeleton = "{verb} solid {color} paint across {quant} {category} object{tail}."
skeleton = "Put a flat coat of {color} over {quant} {category} object in the scene{tail}."
""")

_register(TaskKind.SEGMENTATION, Direction.INVERSE, "b", """
slot verb = Peel | Scrub | Rub | Wipe
@CATEGORY@
@COLOR@
slot tail = , bringing their original appearance back | , so the covered surfaces show once more | , restoring the colors underneath | , recovering every hidden detail
skeleton = "{verb} away the solid {color} paint from the {category} objects{tail}."
skeleton = "Clear the flat {color} coat off the {category} objects{tail}."
""")

_register(TaskKind.DETECTION, Direction.FORWARD, "a", """
slot verb = Draw | Sketch | Place | Add
slot quant = every | each | any
@CATEGORY@
@COLOR@
slot tail = , tracing its rectangular extent | , marking exactly where it sits | , following its outer limits | , enclosing it tightly
skeleton = "{verb} a bounding box in {color} around {quant} {category} object{tail}."
skeleton = "Outline {quant} {category} object with a thin rectangle of {color}{tail}."
""")

_register(TaskKind.DETECTION, Direction.INVERSE, "a", """
slot verb = Remove | Erase | Clear | Delete
@CATEGORY@
@COLOR@
slot tail = , restoring the unmarked image | , leaving the scene annotation-free | , so only the original content remains | , recovering the clean view
skeleton = "{verb} the {color} bounding boxes from around the {category} objects{tail}."
skeleton = "Take down the rectangular {color} markers that frame the {category} objects{tail}."
""")

_register(TaskKind.DETECTION, Direction.FORWARD, "b", """
slot verb = Enclose | Fence | Rim | Band
slot quant = the | every visible | each
@CATEGORY@
@COLOR@
slot tail = , hugging its borders | , to flag its position | , so its footprint is marked | , leaving the interior untouched
skeleton = "{verb} {quant} {category} item inside a rectangular frame of {color}{tail}."
skeleton = "Ring {quant} {category} item with a slim {color}-toned border{tail}."
""")

_register(TaskKind.DETECTION, Direction.INVERSE, "b", """
slot verb = Strip | Peel | Sweep | Lift
@CATEGORY@
@COLOR@
slot tail = , until no markers linger | , returning the untouched picture | , so nothing frames them anymore | , to present the plain scene
skeleton = "{verb} every rectangular {color} frame away from the {category} items{tail}."
skeleton = "Dismantle the slim {color}-toned borders ringing the {category} items{tail}."
""")

_register(TaskKind.EDGE, Direction.FORWARD, "a", """
slot opener = Trace | Extract | Isolate | Distill
slot struct = the sharp boundaries between regions | the strongest contours in the scene | the outlines where colors change abruptly | the crisp silhouette lines
slot tail = and discard all color and shading | while flattening everything else to black | so only white edge strokes remain | leaving a stark line drawing
skeleton = "{opener} {struct} as white lines on black, {tail}."
skeleton = "Reduce the picture to {struct}, drawn in white over a black field."
""")

_register(TaskKind.EDGE, Direction.INVERSE, "a", """
slot opener = Rebuild | Reconstruct | Restore | Repaint
slot struct = the full-color scene suggested by these outlines | a colored rendering from the bare contours | the original shapes and hues behind the line art | solid regions and a backdrop around each outline
slot tail = filling every region with plausible flat colors | giving each enclosed area its own tone | so the line drawing becomes a complete image | replacing the black emptiness with colored surfaces
skeleton = "{opener} {struct}, {tail}."
skeleton = "Turn the white-on-black contour sketch back into {struct}."
""")

_register(TaskKind.EDGE, Direction.FORWARD, "b", """
slot opener = Pare the scene down to | Reduce the whole view to | Keep nothing but | Condense the picture to
slot struct = its brightest boundary lines | bare white outline strokes | the skeleton of its region contours | a web of luminous silhouette lines
slot tail = on an empty black canvas | with nothing else surviving | abandoning hue and texture alike | leaving a stark skeletal sketch
skeleton = "{opener} {struct}, {tail}."
skeleton = "Flatten all content until only {struct} survive against black."
""")

_register(TaskKind.EDGE, Direction.INVERSE, "b", """
slot opener = Flesh out | Inflate | Grow | Expand
slot struct = the skeletal outline strokes into filled colorful regions | the bare boundary lines into solid painted shapes | this contour web into a complete colored scene | the silhouette sketch into full surfaces
slot tail = choosing believable tones for every area | washing color across each bounded zone | until no black void is left | so the sketch becomes a finished picture
skeleton = "{opener} {struct}, {tail}."
skeleton = "Give body and color back to the line work, {tail}."
""")

_register(TaskKind.DEPTH, Direction.FORWARD, "a", """
slot opener = Convert | Translate | Remap | Recast
slot body = every region into a gray tone tied to its distance | the scene into a grayscale range chart | all surfaces into shades encoding how far away they sit | the picture into a distance-graded gray field
slot rule = nearer things glowing brighter and farther ones fading dark | with proximity shown as brightness and remoteness as darkness | so close surfaces read light and distant ones read dark | letting brightness fall away as distance grows
skeleton = "{opener} {body}, {rule}."
skeleton = "Drop all color and shade each area by its distance alone, {rule}."
""")

_register(TaskKind.DEPTH, Direction.INVERSE, "a", """
slot opener = Reimagine | Repaint | Reconstruct | Reinterpret
slot body = the gray distance field as a full-color scene | this brightness-coded range chart as colored shapes | the grayscale gradients as solid objects over a backdrop | the distance shading as a vivid picture
slot tail = assigning believable colors by apparent nearness | restoring hue and texture to every layer | giving each depth band its own solid color | so the range chart becomes an ordinary image
skeleton = "{opener} {body}, {tail}."
skeleton = "Rebuild a colorful scene whose layout honors the gray distance cues, {tail}."
""")

_register(TaskKind.DEPTH, Direction.FORWARD, "b", """
slot opener = Grade | Score | Rank | Order
slot body = each surface on a light-to-dark scale of closeness | the whole frame by distance in plain gray | every pixel by its remove from the viewer | all regions along a brightness ladder of proximity
slot tail = where whiteness means near at hand | with the palest tones hugging the camera | letting blackness stand for the far limit | darkening steadily toward the horizon
skeleton = "{opener} {body}, {tail}."
skeleton = "Abandon color; let gray level alone express closeness, {tail}."
""")

_register(TaskKind.DEPTH, Direction.INVERSE, "b", """
slot opener = Unfold | Unpack | Decode | Expand
slot body = the gray closeness ladder back into a colored scene | this pale-to-dark ranking into real-looking surfaces | the brightness ordering into shapes with proper hues | the monochrome remove-chart into a lively picture
slot tail = matching each band to a sensible color | letting objects regain their own tints | painting plausible colors layer by layer | until nothing monochrome remains
skeleton = "{opener} {body}, {tail}."
skeleton = "Reverse the gray closeness coding into normal colors, {tail}."
""")

_register(TaskKind.SURFACE_NORMAL, Direction.FORWARD, "a", """
slot opener = Encode | Express | Portray | Depict
slot body = the tilt of every surface as color | each facet's facing direction in smooth hues | surface orientation as flowing color gradients | the way each region faces the camera as a tint
slot tail = flat areas settling into one uniform tone | curved shells sweeping through gradual rainbows | with color rather than texture carrying the geometry | so orientation alone decides every pixel
skeleton = "{opener} {body}, {tail}."
skeleton = "Swap appearance for geometry: {body}, {tail}."
""")

_register(TaskKind.SURFACE_NORMAL, Direction.INVERSE, "a", """
slot opener = Materialize | Solidify | Realize | Render
slot body = the orientation tints back into shaded solid objects | this direction-coded chart as a plainly colored scene | each hue gradient as a real curved or flat surface | the facing-direction palette as ordinary shapes
slot tail = restoring natural colors and lighting | with believable tints replacing the geometric sweep | so the geometry guide becomes a normal picture | letting objects wear their own colors again
skeleton = "{opener} {body}, {tail}."
skeleton = "Turn the gradient geometry chart into an everyday scene, {tail}."
""")

_register(TaskKind.SURFACE_NORMAL, Direction.FORWARD, "b", """
slot opener = Translate | Map | Transcribe | Convert
slot body = every slope and bulge into a paint value | the lean of each face into its own shade | all surface pitch into graded tints | the angles surfaces make with the viewer into color bands
slot tail = level planes frozen at a single hue | rounded forms melting across the spectrum | ignoring material and keeping only pose | so the palette reads as pure geometry
skeleton = "{opener} {body}, {tail}."
skeleton = "Let color alone record which way each surface leans, {tail}."
""")

_register(TaskKind.SURFACE_NORMAL, Direction.INVERSE, "b", """
slot opener = Rebuild | Recover | Reconstitute | Restage
slot body = tangible objects from the slope-coded palette | the original scene out of the angle bands | familiar shapes from the pose-only tints | a realistic view from the geometry shades
slot tail = dressing each form in sensible colors again | bringing back material and lighting cues | abandoning the angular color code entirely | until it looks like a plain photo of shapes
skeleton = "{opener} {body}, {tail}."
skeleton = "Re-dress the slope palette as a plain scene, {tail}."
""")

_register(TaskKind.DERAIN, Direction.FORWARD, "a", """
slot opener = Remove | Eliminate | Clear away | Dissolve
slot body = the bright streaks slanting across the scene | every falling-rain stripe | the diagonal rain trails | the streaking downpour marks
slot tail = leaving clean unobstructed surfaces | so the view reads dry and crisp | restoring an untouched clear take | until no streaks interrupt the shapes
skeleton = "{opener} {body}, {tail}."
skeleton = "Dry the picture out by erasing {body}, {tail}."
""")

_register(TaskKind.DERAIN, Direction.INVERSE, "a", """
slot opener = Overlay | Scatter | Streak | Drape
slot body = pale slanting rain trails across the scene | thin bright downpour lines over everything | diagonal showers of light streaks | a curtain of falling strokes
slot tail = so the scene reads caught in rain | dimming clarity behind the weather | as if a storm were passing through | until a rainy mood settles in
skeleton = "{opener} {body}, {tail}."
skeleton = "Let rain move in: add {body}, {tail}."
""")

_register(TaskKind.DERAIN, Direction.FORWARD, "b", """
slot verb = Take | Wash | Wipe | Brush
slot extent = every | each and every | all the
slot tail = , so the scene reads dry again | , leaving every surface clean and unobstructed | , until nothing streaks the view | , restoring a clear dry take
skeleton = "{verb} {extent} rain streak out of the picture{tail}."
skeleton = "{verb} {extent} slanting rain trail away from the scene{tail}."
""")

_register(TaskKind.DERAIN, Direction.INVERSE, "b", """
slot verb = Draw | Send | Throw | Strew
slot extent = pale | thin bright | diagonal
slot tail = , so the scene reads caught in rain | , until a rainy mood takes hold | , dimming the view behind falling water | , as though a storm moved in
skeleton = "{verb} {extent} rain streaks down across the picture{tail}."
skeleton = "{verb} a curtain of {extent} rain trails over the scene{tail}."
""")

_register(TaskKind.DEHAZE, Direction.FORWARD, "a", """
slot opener = Lift | Remove | Dispel | Clear
slot body = the milky veil washing over the scene | the whitish haze flattening the colors | the pale fog laid across everything | the bleaching mist that mutes the view
slot tail = restoring full contrast and saturation | letting the original colors come back through | so every region reads crisp again | until the scene looks freshly rinsed
skeleton = "{opener} {body}, {tail}."
skeleton = "Burn off the haze completely, {tail}."
""")

_register(TaskKind.DEHAZE, Direction.INVERSE, "a", """
slot opener = Blend | Wash | Sink | Fold
slot body = the scene toward a uniform white haze | everything into a pale foggy veil | the view under a milky atmosphere | all colors toward a bleached mist
slot tail = softening contrast throughout | so distant and near alike turn pale | quieting every hue beneath the fog | until the picture looks half-erased by weather
skeleton = "{opener} {body}, {tail}."
skeleton = "Let an even mist settle across the whole frame, {tail}."
""")

_register(TaskKind.DEHAZE, Direction.FORWARD, "b", """
slot opener = Peel back | Lift away | Scrub off | Rinse away
slot body = the chalky haze film dulling the picture | the washed-out foggy overcast | the pale mist gauze over the scene | the white haze cast muting every region
slot tail = and let saturation snap back | so the palette regains its depth | until nothing pale lingers | and return the unclouded view
skeleton = "{opener} {body}, {tail}."
skeleton = "Cut through the murk until the scene is clear, {tail}."
""")

_register(TaskKind.DEHAZE, Direction.INVERSE, "b", """
slot opener = Pull | Draw | Drag | Settle
slot body = a chalky haze film over the whole picture | a washed-out foggy overcast across the scene | a pale mist gauze over every region | a bleached haze cast onto all the colors
slot tail = thinning the contrast evenly | nudging every tone toward white | as though weather rolled in | leaving the view soft and bleached
skeleton = "{opener} {body}, {tail}."
skeleton = "Dim the clarity beneath an oncoming whiteout, {tail}."
""")

_register(TaskKind.DESNOW, Direction.FORWARD, "a", """
slot opener = Remove | Melt away | Clear | Brush off
slot body = the white flecks speckling the scene | every scattered snowflake dot | the translucent specks drifting over the view | the flurry of pale spots
slot tail = leaving surfaces unbroken and clean | so nothing speckles the shapes | restoring the calm unspotted view | until the air looks still again
skeleton = "{opener} {body}, {tail}."
skeleton = "Sweep the snowfall out of the frame, {tail}."
""")

_register(TaskKind.DESNOW, Direction.INVERSE, "a", """
slot opener = Sprinkle | Scatter | Dust | Fleck
slot body = white snowflake specks across the scene | small pale dots over every region | a light flurry of bright spots | drifting white flecks through the air
slot tail = suggesting a quiet snowfall | so winter settles over the view | speckling near and far alike | until the scene reads snowy
skeleton = "{opener} {body}, {tail}."
skeleton = "Let snow begin falling through the picture, {tail}."
""")

_register(TaskKind.DESNOW, Direction.FORWARD, "b", """
slot opener = Vacuum | Comb | Filter | Sift
slot body = every stray white snow speck out of the image | the wintry snowflake dots from the whole frame | the snowy powder flecks off the scene | all the blizzard snow spatter from view
slot tail = so the surfaces run unbroken | recovering the spotless arrangement | until not one fleck survives | and still the flurry for good
skeleton = "{opener} {body}, {tail}."
skeleton = "Quiet the snowstorm by deleting its specks, {tail}."
""")

_register(TaskKind.DESNOW, Direction.INVERSE, "b", """
slot opener = Seed | Salt | Pepper | Stipple
slot body = the frame with wintry snow specks | the scene with snowy powder flecks | every region with cold snowflake dots | the view with blizzard snow spatter
slot tail = building a gentle flurry | as though a squall just started | thickening toward a whiteout | letting flakes hang mid-air
skeleton = "{opener} {body}, {tail}."
skeleton = "Wake a snowstorm inside the picture, {tail}."
""")

_register(TaskKind.LOWLIGHT, Direction.FORWARD, "a", """
slot opener = Raise | Lift | Boost | Recover
slot body = the exposure until the scene reads daylit | the brightness so colors regain strength | every tone out of the gloom | the luminance across the whole frame
slot tail = keeping hues faithful while lightening them | so shadows release their detail | until nothing hides in darkness | restoring an evenly lit view
skeleton = "{opener} {body}, {tail}."
skeleton = "Relight the underexposed scene to full strength, {tail}."
""")

_register(TaskKind.LOWLIGHT, Direction.INVERSE, "a", """
slot opener = Dim | Darken | Lower | Sink
slot body = the scene into deep underexposure | every region toward nightfall | the lighting to a faint glow | all brightness down near black
slot tail = scaling each color toward shadow | as if the light source failed | keeping shapes barely legible | so the view reads nocturnal
skeleton = "{opener} {body}, {tail}."
skeleton = "Starve the picture of light, {tail}."
""")

_register(TaskKind.LOWLIGHT, Direction.FORWARD, "b", """
slot opener = Flood | Bathe | Soak | Fill
slot body = the murky frame with restored light | the dim scene in proper illumination | every shadowed region with its missing glow | the dark view with full brightness
slot tail = until the gloom completely lifts | letting buried colors surface | evening out the exposure everywhere | so the image reads freshly lit
skeleton = "{opener} {body}, {tail}."
skeleton = "Rescue the scene from its darkness, {tail}."
""")

_register(TaskKind.LOWLIGHT, Direction.INVERSE, "b", """
slot opener = Drain | Bleed | Sap | Leach
slot body = the light out of the scene | illumination from every region | the glow from the whole frame | brightness from each surface
slot tail = until dusk overtakes it | pushing every tone toward black | as though the lamps went out | leaving only murky outlines
skeleton = "{opener} {body}, {tail}."
skeleton = "Usher the picture into near darkness, {tail}."
""")

_register(TaskKind.BLUR, Direction.FORWARD, "a", """
slot opener = Sharpen | Refocus | Crispen | Resolve
slot body = the smeared shapes back into clean boundaries | every soft edge into a hard line | the washed-together regions into distinct forms | the fuzzy picture into a crisp one
slot tail = undoing the uniform smearing | so borders snap into place | recovering fine transitions between areas | until nothing looks out of focus
skeleton = "{opener} {body}, {tail}."
skeleton = "Pull the image back into focus, {tail}."
""")

_register(TaskKind.BLUR, Direction.INVERSE, "a", """
slot opener = Soften | Smear | Diffuse | Blend
slot body = the whole picture with an even blur | every boundary into its neighbors | all detail beneath a uniform veil of defocus | the crisp forms into gentle gradients
slot tail = as though the lens slipped out of focus | spreading each color into the next | dissolving the hard edges evenly | until outlines barely survive
skeleton = "{opener} {body}, {tail}."
skeleton = "Defocus the scene uniformly, {tail}."
""")

_register(TaskKind.BLUR, Direction.FORWARD, "b", """
slot opener = Snap | Tighten | Chisel | Etch
slot body = the mushy blurred regions back to exact borders | soft unfocused gradients into decisive sharp edges | the out-of-focus blobs into clear sharp shapes | blurred content into clean sharp geometry
slot tail = reversing the defocus entirely | so every contour stands knife-sharp | granting each region a firm outline | until the picture reads perfectly steady
skeleton = "{opener} {body}, {tail}."
skeleton = "Undo the optical smear completely, {tail}."
""")

_register(TaskKind.BLUR, Direction.INVERSE, "b", """
slot opener = Melt | Feather | Fog | Mush
slot body = the crisp borders into soft blurred washes | each hard outline into a blurred gradient | the exact geometry into drifting unfocused blobs | all sharp edges into gentle blurred transitions
slot tail = with one even pass of defocus | as if viewed through frosted glass | spreading pigment past every boundary | so nothing keeps a firm edge
skeleton = "{opener} {body}, {tail}."
skeleton = "Slide the scene out of focus, {tail}."
""")

_register(TaskKind.COMPOSITIONAL_EDIT, Direction.FORWARD, "a", """
slot verb = Recolor | Repaint | Retint | Redye
slot quant = every | each | any
@CATEGORY@
@COLOR@
slot tail = while leaving the rest of the scene untouched | and keep everything else exactly as it is | changing nothing beyond those shapes | without disturbing the surroundings
skeleton = "{verb} {quant} {category} object to {color}, {tail}."
""")

_register(TaskKind.COMPOSITIONAL_EDIT, Direction.INVERSE, "a", """
slot verb = Return | Revert | Restore | Reset
@CATEGORY@
@COLOR@
slot tail = exactly as they were before | undoing the color change completely | so the earlier palette comes back | as though never repainted
skeleton = "{verb} the {category} objects to their original color, {tail}."
skeleton = "Undo the {color} recoloring of the {category} objects, {tail}."
""")

_register(TaskKind.COMPOSITIONAL_EDIT, Direction.FORWARD, "b", """
slot verb = Dye | Tint | Stain | Soak
slot quant = the | every single | each
@CATEGORY@
@COLOR@
slot tail = touching nothing else in the frame | keeping the backdrop exactly intact | with the remainder of the view frozen | sparing every other element
skeleton = "{verb} {quant} {category} piece in {color}, {tail}."
""")

_register(TaskKind.COMPOSITIONAL_EDIT, Direction.INVERSE, "b", """
slot verb = Unwind | Roll back | Cancel | Discard
@CATEGORY@
@COLOR@
slot tail = letting the old tones reappear | so the pieces look untouched again | recovering their previous coloring | back to the prior state
skeleton = "{verb} the {color} tinting on the {category} pieces, {tail}."
""")


# Clause grammars used to phrase each compositional-edit op; joined per edit.
_CLAUSE_SOURCES: dict[tuple[str, Direction, str], str] = {
    ("recolor", Direction.FORWARD, "a"): _src("""
@CATEGORY@
@COLOR@
skeleton = "Recolor every {category} object to {color}"
skeleton = "Repaint each {category} object in {color}"
skeleton = "Turn all the {category} objects {color}"
skeleton = "Shift the {category} objects toward {color}"
"""),
    ("recolor", Direction.INVERSE, "a"): _src("""
@CATEGORY@
skeleton = "Give the {category} objects back their original color"
skeleton = "Undo the recoloring of the {category} objects"
skeleton = "Restore the {category} objects to their former hue"
skeleton = "Let the {category} objects revert to how they looked"
"""),
    ("weather", Direction.FORWARD, "a"): _src("""
@WEATHER@
skeleton = "Add a layer of {weather} over the whole scene"
skeleton = "Let {weather} drift into the view"
skeleton = "Fold {weather} into the atmosphere"
skeleton = "Cast {weather} across the frame"
"""),
    ("weather", Direction.INVERSE, "a"): _src("""
@WEATHER@
skeleton = "Clear the {weather} back out of the scene"
skeleton = "Remove every trace of {weather}"
skeleton = "Sweep the {weather} away"
skeleton = "Let the {weather} dissipate completely"
"""),
    ("relight", Direction.FORWARD, "a"): _src("""
skeleton = "Dim the overall lighting noticeably"
skeleton = "Lower the scene's brightness"
skeleton = "Let the light fade toward dusk"
skeleton = "Darken the whole frame"
"""),
    ("relight", Direction.INVERSE, "a"): _src("""
skeleton = "Brighten the lighting back up"
skeleton = "Restore the original brightness"
skeleton = "Raise the exposure to its earlier level"
skeleton = "Return the light to full strength"
"""),
    ("recolor", Direction.FORWARD, "b"): _src("""
@CATEGORY@
@COLOR@
skeleton = "Dye every {category} piece in {color}"
skeleton = "Tint the {category} pieces {color}"
skeleton = "Stain all {category} pieces with {color}"
skeleton = "Wash the {category} pieces over in {color}"
"""),
    ("recolor", Direction.INVERSE, "b"): _src("""
@CATEGORY@
skeleton = "Strip the new tint off the {category} pieces"
skeleton = "Bring the {category} pieces back to their prior coloring"
skeleton = "Cancel the dye applied to the {category} pieces"
skeleton = "Roll the {category} pieces back to their earlier look"
"""),
    ("weather", Direction.FORWARD, "b"): _src("""
@WEATHER@
skeleton = "Summon {weather} throughout the scene"
skeleton = "Blanket the view in {weather}"
skeleton = "Introduce drifting {weather} everywhere"
skeleton = "Charge the air with {weather}"
"""),
    ("weather", Direction.INVERSE, "b"): _src("""
@WEATHER@
skeleton = "Banish the {weather} from the scene"
skeleton = "Dissolve the {weather} entirely"
skeleton = "Chase the {weather} out of the frame"
skeleton = "Scrub the air free of {weather}"
"""),
    ("relight", Direction.FORWARD, "b"): _src("""
skeleton = "Sink the scene into heavier shadow"
skeleton = "Pull the exposure down markedly"
skeleton = "Drain much of the light away"
skeleton = "Deepen the gloom across the view"
"""),
    ("relight", Direction.INVERSE, "b"): _src("""
skeleton = "Flood the light back in"
skeleton = "Lift the exposure to where it was"
skeleton = "Recover the earlier illumination"
skeleton = "Push the brightness back to normal"
"""),
}

FAMILIES = ("a", "b")


class GrammarLibrary:
    """All builtin grammars of one phrasing family, compiled and validated."""

    def __init__(self, family: str = "a"):
        if family not in FAMILIES:
            raise ValueError(f"unknown grammar family: {family!r}")
        self.family = family
        self.palette = list(PALETTE)
        self._grammars: dict[tuple[TaskKind, Direction], TemplateGrammar] = {}
        for task in TaskKind:
            for direction in Direction:
                source = _SOURCES[(task, direction, family)]
                self._grammars[(task, direction)] = compile_grammar(task, source, direction)
        self._clauses: dict[tuple[str, Direction], TemplateGrammar] = {}
        for (op, direction, fam), source in _CLAUSE_SOURCES.items():
            if fam == family:
                self._clauses[(op, direction)] = compile_grammar(
                    TaskKind.COMPOSITIONAL_EDIT, source, direction)

    def get(self, task: TaskKind, direction: Direction) -> TemplateGrammar:
        return self._grammars[(task, direction)]

    def sample_pair(self, task: TaskKind, seed: int,
                    bindings: dict[str, str] | None = None) -> InstructionPair:
        return sample_instruction_pair(self.get(task, Direction.FORWARD),
                                       self.get(task, Direction.INVERSE),
                                       seed, bindings=bindings)

    def instructions_for_edits(self, ops: list[tuple], seed: int) -> tuple[str, str]:
        """Phrase a compositional edit: forward clauses in op order, inverse
        clauses undoing them in reverse order."""
        rng = random.Random(seed)
        fwd_clauses: list[str] = []
        inv_clauses: list[str] = []
        for op in ops:
            name = op[0]
            if name == "recolor":
                pinned = {"category": op[1], "color": op[2]}
            elif name == "weather":
                pinned = {"weather": op[1]}
            else:
                pinned = {}
            fwd_clauses.append(sample_form(self._clauses[(name, Direction.FORWARD)],
                                           rng, pinned)[0])
            inv_clauses.append(sample_form(self._clauses[(name, Direction.INVERSE)],
                                           rng, pinned)[0])
        fwd_text = " ".join(c + "." for c in fwd_clauses)
        inv_text = " ".join(c + "." for c in reversed(inv_clauses))
        return fwd_text, inv_text


@functools.lru_cache(maxsize=None)
def builtin_library(family: str = "a") -> GrammarLibrary:
    return GrammarLibrary(family)


@functools.lru_cache(maxsize=None)
def lexicon() -> tuple[str, ...]:
    """Every slot alternative and skeleton frame across all builtin grammars.

    Feeding this into vocab construction gives the word table full coverage of
    the instruction language, so held-out phrasings tokenize like seen ones
    instead of degrading to byte fallback.
    """
    lines: list[str] = []
    for source in list(_SOURCES.values()) + list(_CLAUSE_SOURCES.values()):
        g = compile_grammar(TaskKind.EDGE, source)
        for alternatives in g.slots.values():
            lines.extend(alternatives)
        for skeleton in g.skeletons:
            lines.append(_SLOT_RE.sub(" ", skeleton))
    return tuple(lines)
