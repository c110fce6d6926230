#!/usr/bin/env python3
"""Regenerates tests/fixtures/pool200: 200 small images plus manifest.json.

Five categories x 40 images, split 20 pleasing / 20 displeasing per category.
Two images per category are written as JPEG so both decoders are exercised.
The expected counts are printed so they can be checked against the manifest.
"""
import json
import os
import random

from PIL import Image, ImageDraw

CATEGORIES = ["flowers", "cars", "buildings", "animals", "models"]
HERE = os.path.dirname(os.path.abspath(__file__))
OUT = os.path.join(HERE, "pool200")


def draw(rng, pleasing, w=48, h=40):
    if pleasing:
        bg = tuple(rng.randint(150, 255) for _ in range(3))
    else:
        bg = tuple(rng.randint(0, 90) for _ in range(3))
    img = Image.new("RGB", (w, h), bg)
    d = ImageDraw.Draw(img)
    for _ in range(rng.randint(2, 5)):
        x0, y0 = rng.randint(0, w - 8), rng.randint(0, h - 8)
        x1, y1 = x0 + rng.randint(4, 20), y0 + rng.randint(4, 20)
        fill = tuple(rng.randint(0, 255) for _ in range(3))
        if pleasing:
            d.ellipse([x0, y0, x1, y1], fill=fill)
        else:
            d.line([x0, y0, x1, y1], fill=fill, width=3)
    return img


def main():
    rng = random.Random(20170804)
    os.makedirs(os.path.join(OUT, "img"), exist_ok=True)
    images = []
    for cat in CATEGORIES:
        for i in range(40):
            pleasing = i < 20
            jpeg = i in (0, 20)
            name = f"img/{cat}_{i:02d}.{'jpg' if jpeg else 'png'}"
            img = draw(rng, pleasing)
            if jpeg:
                img.save(os.path.join(OUT, name), "JPEG", quality=90)
            else:
                img.save(os.path.join(OUT, name), "PNG")
            images.append({
                "id": f"{cat}-{i:02d}",
                "path": name,
                "category": cat,
                "valence": "pleasing" if pleasing else "displeasing",
                "source_url": f"https://example.org/fixtures/{cat}/{i}",
                "license": "CC0-1.0",
            })
    with open(os.path.join(OUT, "manifest.json"), "w", encoding="utf-8") as f:
        json.dump({"version": 1, "images": images}, f, indent=1)
        f.write("\n")
    p = sum(1 for e in images if e["valence"] == "pleasing")
    print(f"m={len(images)} p={p} d={len(images) - p}")


if __name__ == "__main__":
    main()
