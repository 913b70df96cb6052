"""Regenerate the 20-sample mock fixture corpus in this directory.

Writes images/, manifest.jsonl and mock_script.jsonl. The script texts use
{answer}/{label}/{text} placeholders so negatives name whichever incorrect
answer the run selects. Outcome comments next to each entry are the expected
filter results over the full corpus.
"""
import json
from pathlib import Path

import numpy as np
from PIL import Image

HERE = Path(__file__).resolve().parent

GOOD_NEG = "Step 1, the image suggests a different reading. Step 2, so the answer is {answer}."

# id, question, choices, correct label, positive, negative (None = no script), naive
SAMPLES = [
    # kept
    ("s01", "What is 2+2?", [("(A)", "3"), ("(B)", "4")], "(B)",
     "Step 1, add two and two. Step 2, the answer is {answer}.", GOOD_NEG,
     "Step 1, two plus two. Step 2, the answer is (B)."),
    # kept (positive names the bare text)
    ("s02", "How many sides does the shape have?", [("(A)", "three"), ("(B)", "four"), ("(C)", "five")], "(B)",
     "Step 1, count the edges of the square. Step 2, it has {text}.", GOOD_NEG,
     "Step 1, count edges. Step 2, it has four sides."),
    # dropped: positive conclusion
    ("s03", "What is the measure of angle C?", [("(A)", "30"), ("(B)", "45"), ("(C)", "60"), ("(D)", "90")], "(C)",
     "Step 1, measure the angle. Step 2, the triangle is equilateral so every angle matches.", GOOD_NEG,
     "Step 1, the triangle is equilateral. Step 2, the answer is (C)."),
    # kept
    ("s04", "Which color is the largest region?", [("(A)", "red"), ("(B)", "blue")], "(A)",
     "Step 1, compare the areas. Step 2, the largest area is {answer}.", GOOD_NEG,
     "Step 1, compare areas. Step 2, the answer is (A) red."),
    # dropped: positive circularity
    ("s05", "Is the triangle isosceles?", [("(A)", "yes"), ("(B)", "no")], "(A)",
     "Step 1, the side is equal to the side is equal to the side is equal to the side is equal to the base. "
     "Step 2, so the answer is {answer}.", GOOD_NEG,
     "Step 1, two sides match. Step 2, the answer is (A)."),
    # dropped: negative conclusion
    ("s06", "What is 10 divided by 2?", [("(A)", "5"), ("(B)", "2"), ("(C)", "20")], "(A)",
     "Step 1, split ten into two groups. Step 2, the answer is {answer}.",
     "Step 1, the division looks unusual. Step 2, I cannot decide.",
     "Step 1, ten over two. Step 2, the answer is (A)."),
    # kept
    ("s07", "How many circles are shown?", [("(A)", "one"), ("(B)", "two"), ("(C)", "three")], "(C)",
     "Step 1, count each circle. Step 2, there are {answer}.", GOOD_NEG,
     "Step 1, count circles. Step 2, the answer is (C)."),
    # kept: a 3-gram repeated exactly three times is allowed
    ("s08", "What is the ratio of the shaded part?", [("(A)", "1/2"), ("(B)", "1/4")], "(A)",
     "Step 1, the ratio is two halves. Step 2, the ratio is one of two. Step 3, the ratio is half, "
     "so the answer is {answer}.", GOOD_NEG,
     "Step 1, half is shaded. Step 2, the answer is (A)."),
    # kept: negatives skip the circularity check
    ("s09", "Which line is longer?", [("(A)", "top"), ("(B)", "bottom")], "(B)",
     "Step 1, measure both lines. Step 2, the longer one is the {text} line.",
     "Step 1, look closer look closer look closer look closer look closer. Step 2, hence the answer is {answer}.",
     "Step 1, measure. Step 2, the answer is (B)."),
    # kept
    ("s10", "What is the area of the rectangle?", [("(A)", "12"), ("(B)", "7"), ("(C)", "24")], "(A)",
     "Step 1, multiply three by four. Step 2, the area is {answer}.", GOOD_NEG,
     "Step 1, three times four. Step 2, the answer is (A)."),
    # dropped: no negative generated
    ("s11", "Is the figure symmetric?", [("(A)", "yes"), ("(B)", "no")], "(A)",
     "Step 1, fold along the axis. Step 2, the halves match, so {answer}.", None,
     "Step 1, fold it. Step 2, the answer is (A)."),
    # dropped: positive conclusion and negative conclusion
    ("s12", "How many dots are in the grid?", [("(A)", "6"), ("(B)", "8"), ("(C)", "9")], "(C)",
     "Step 1, count rows and columns. Step 2, multiply them together.",
     "Step 1, the grid is blurry. Step 2, the count is unclear.",
     "Step 1, three by three. Step 2, the answer is (C)."),
    # kept (positive names the label only)
    ("s13", "Which shape has no corners?", [("(A)", "square"), ("(B)", "circle"), ("(C)", "triangle")], "(B)",
     "Step 1, look for round outlines. Step 2, the answer is {label}.", GOOD_NEG,
     "Step 1, round outline. Step 2, the answer is (B)."),
    # kept
    ("s14", "What is 3 times 3?", [("(A)", "6"), ("(B)", "9")], "(B)",
     "Step 1, three groups of three. Step 2, the answer is {answer}.", GOOD_NEG,
     "Step 1, three groups. Step 2, the answer is (A)."),
    # dropped: positive circularity
    ("s15", "How many apples are in the basket?", [("(A)", "four"), ("(B)", "five")], "(A)",
     "Step 1, we count again and we count again and we count again and we count again. "
     "Step 2, the answer is {answer}.", GOOD_NEG,
     "Step 1, count. Step 2, the answer is (B)."),
    # kept
    ("s16", "Which angle is obtuse?", [("(A)", "angle P"), ("(B)", "angle Q"), ("(C)", "angle R")], "(C)",
     "Step 1, compare each angle to a right angle. Step 2, only {answer} exceeds it.", GOOD_NEG,
     "Step 1, compare. Step 2, the answer is (A)."),
    # dropped: negative conclusion
    ("s17", "What fraction is shaded?", [("(A)", "one third"), ("(B)", "two thirds")], "(B)",
     "Step 1, two of three parts are shaded. Step 2, the answer is {answer}.",
     "Step 1, the shading is hard to see. Step 2, no conclusion is possible.",
     "Step 1, two parts. Step 2, the answer is (B) one third."),
    # kept
    ("s18", "What is the perimeter of the square?", [("(A)", "16"), ("(B)", "8"), ("(C)", "12")], "(A)",
     "Step 1, each side is four. Step 2, four sides give {answer}.", GOOD_NEG,
     "Step 1, four sides. Step 2, either (A) or (B)."),
    # dropped: positive conclusion (final step avoids committing)
    ("s19", "Is the number of stars even?", [("(A)", "yes"), ("(B)", "no")], "(B)",
     "Step 1, count the stars. Step 2, there are seven stars in total.", GOOD_NEG,
     "Step 1, count. Step 2, both (A) and (B) seem possible."),
    # kept
    ("s20", "Which bar is tallest?", [("(A)", "first"), ("(B)", "second"), ("(C)", "third")], "(A)",
     "Step 1, compare the bar heights. Step 2, the tallest is {answer}.", GOOD_NEG,
     "Step 1, compare heights. Step 2, hard to tell."),
]


def make_image(i: int) -> np.ndarray:
    gen = np.random.default_rng(1000 + i)
    img = np.full((32, 32, 3), 200, dtype=np.uint8)
    img[:, :] = gen.integers(0, 256, size=3, dtype=np.uint8)
    top, left = gen.integers(0, 16, size=2)
    img[top:top + 12, left:left + 12] = gen.integers(0, 256, size=3, dtype=np.uint8)
    return img


def main():
    (HERE / "images").mkdir(exist_ok=True)
    manifest, script = [], []
    for i, (sid, q, choices, correct, pos, neg, naive) in enumerate(SAMPLES):
        path = f"images/{sid}.png"
        Image.fromarray(make_image(i), "RGB").save(HERE / path, format="PNG")
        ch = [{"label": lab, "text": txt} for lab, txt in choices]
        corr = next(c for c in ch if c["label"] == correct)
        manifest.append({
            "id": sid, "image_path": path, "question": q, "choices": ch,
            "correct": corr, "incorrect": [c for c in ch if c is not corr],
        })
        script.append({"sample_id": sid, "kind": "positive", "text": pos})
        if neg is not None:
            script.append({"sample_id": sid, "kind": "negative", "text": neg})
        script.append({"sample_id": sid, "kind": "naive", "text": naive})
    with open(HERE / "manifest.jsonl", "w", encoding="utf-8", newline="\n") as fh:
        for obj in manifest:
            fh.write(json.dumps(obj, ensure_ascii=False) + "\n")
    with open(HERE / "mock_script.jsonl", "w", encoding="utf-8", newline="\n") as fh:
        for obj in script:
            fh.write(json.dumps(obj, ensure_ascii=False) + "\n")


if __name__ == "__main__":
    main()
