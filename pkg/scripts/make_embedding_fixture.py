#!/usr/bin/env python3
"""Regenerate the packaged 50-d embedding fixture.

The fixture stands in for a real pretrained 300-d table at desk scale: 500
words covering the default catalog vocabulary plus common filler, each with
a deterministic unit-norm vector derived from a hash of the word.  Output is
stable byte-for-byte, so the committed file never drifts.
"""

import sys
from hashlib import sha256
from pathlib import Path

import numpy as np

sys.path.insert(0, str(Path(__file__).resolve().parents[1] / "src"))

from scenesearch import procgen  # noqa: E402
from scenesearch.embeddings import tokenize  # noqa: E402

DIM = 50
WORD_COUNT = 500
OUT = Path(__file__).resolve().parents[1] / "src" / "scenesearch" / "data" / "embeddings_50d.txt"

FILLER = """
the of and to in is was for on as with by at from it an be this that or are
not have had has but they you all can her his she him will one would there
what so up out if about who get which go me when make like time no just know
take people into year your good some could them see other than then now look
only come its over think also back after use two how our work first well way
even new want because any these give day most us item box jar bottle can pack
carton bag tin tub crate basket bin tray rack holder stand door wall floor
ceiling window table chair couch sofa desk lamp light switch plug shelfback
corner front side top bottom middle left right near far big small wide tall
short narrow deep shallow heavy lightweight round square flat thick thin
plastic metal glass wooden paper cloth leather rubber ceramic steel iron
copper silver pink orange gray grey violet maroon navy teal beige ivory
cream crimson scarlet amber bronze pearl ruby coral salmon olive lime mint
forest sky sea sand stone brick smoke snow milk butter cream2 cheese yogurt
egg flour sugar salt pepper oil vinegar honey jam jelly syrup rice bean corn
pea potato tomato onion carrot apple banana orange2 grape lemon melon berry
cherry peach pear plum mango kiwi nut almond walnut peanut raisin oat wheat
barley noodle sausage bacon ham chicken beef pork lamb fish tuna salmon2
shrimp crab lobster clam oyster water wine beer cider cocoa latte mocha
espresso cappuccino chai herbal mineral sparkling still bath shower towel
brush comb razor mirror tissue cotton sponge bucket mop broom duster vacuum
iron2 board hanger drawer chest wardrobe dresser nightstand bookcase ladder
toolbox hammer wrench screwdriver drill saw nail screw bolt glue tape rope
wire cord chain lock key helmet glove scarf coat jacket sweater shirt pant
sock shoe boot sandal slipper cap crown ribbon button zipper pocket puzzle
doll robot blocks dice card chess checkers domino marble kite drum guitar
piano violin flute trumpet novel comic atlas dictionary journal diary album
magazine recipe manual guide textbook notebook binder folder envelope stamp
pencil pen marker crayon eraser ruler scissors stapler clip pin tack board2
chalk ink paint easel canvas frame photo poster clock watch timer alarm bell
whistle horn radio speaker camera phone tablet laptop monitor keyboard mouse
cable charger battery bulb candle match lighter torch lantern fan heater
cooler freezer oven stove toaster kettle blender mixer grinder juicer pot pan
skillet wok lid spoon fork knife plate bowl cup mug glass2 pitcher flask
thermos strainer grater peeler whisk tong spatula ladle napkin apron towel2
vase plant flower seed soil pot2 hose shovel rake hoe wheelbarrow mower
"""


def vocabulary() -> list[str]:
    words: list[str] = []
    seen = set()

    def add(token: str):
        token = token.lower()
        if token and token not in seen:
            seen.add(token)
            words.append(token)

    for room in procgen.DEFAULT_ROOMS:
        for tok in tokenize(room):
            add(tok)
    for storage in procgen.DEFAULT_STORAGE:
        add(storage)
    add("shelf")
    add("house")
    for cat in procgen._CATEGORY_STORAGE:
        add(cat)
    for adj in procgen._ADJECTIVES:
        add(adj)
    for color in procgen._COLORS:
        add(color)
    for tok in FILLER.split():
        add(tok)
    if len(words) < WORD_COUNT:
        raise SystemExit(f"need {WORD_COUNT} words, have {len(words)}")
    return words[:WORD_COUNT]


def word_vector(word: str) -> np.ndarray:
    digest = sha256(f"fixture1:{word}".encode("utf-8")).digest()
    rng = np.random.default_rng(int.from_bytes(digest[:8], "little"))
    vec = rng.standard_normal(DIM)
    return vec / np.linalg.norm(vec)


def main() -> None:
    OUT.parent.mkdir(parents=True, exist_ok=True)
    lines = []
    for word in vocabulary():
        vec = word_vector(word)
        lines.append(word + " " + " ".join(f"{v:.6f}" for v in vec))
    OUT.write_text("\n".join(lines) + "\n", encoding="utf-8")
    print(f"wrote {OUT} ({len(lines)} words, dim {DIM})")


if __name__ == "__main__":
    main()
