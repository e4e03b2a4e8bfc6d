# Copyright 2026 The GeoForge Authors
# SPDX-License-Identifier: Apache-2.0
"""Regenerates the replay fixtures under fixtures/zurich.

The Overpass response is hand-authored (three ways and one multipolygon
relation with a courtyard). Tiles are synthetic 256x256 PNGs covering the
bbox at the zoom the CLI picks automatically.
"""
import json
import math
import pathlib

from PIL import Image, ImageDraw

BBOX = (47.3700, 8.5400, 47.3710, 8.5415)  # minlat, minlon, maxlat, maxlon
OVERPASS_URL = "https://overpass-api.de/api/interpreter"
TILE_URL = "https://api.mapbox.com/v4/mapbox.satellite/{z}/{x}/{y}.png"
TILE = 256
ROOT = pathlib.Path(__file__).resolve().parent
OUT = ROOT / "zurich"


def rect(lat0, lon0, lat1, lon1):
    ring = [(lat0, lon0), (lat0, lon1), (lat1, lon1), (lat1, lon0), (lat0, lon0)]
    return [{"lat": a, "lon": b} for a, b in ring]


def global_px(lat, lon, z):
    scale = TILE * 2**z
    s = math.sin(math.radians(lat))
    return (lon + 180.0) / 360.0 * scale, (0.5 - math.log((1 + s) / (1 - s)) / (4 * math.pi)) * scale


def choose_zoom(min_side=512, max_zoom=19):
    for z in range(max_zoom + 1):
        x0, y0 = global_px(BBOX[2], BBOX[1], z)
        x1, y1 = global_px(BBOX[0], BBOX[3], z)
        if max(x1 - x0, y1 - y0) >= min_side:
            return z
    return max_zoom


def overpass():
    l_shape = [(47.37050, 8.54060), (47.37050, 8.54100), (47.37065, 8.54100), (47.37065, 8.54075),
               (47.37080, 8.54075), (47.37080, 8.54060), (47.37050, 8.54060)]
    return {
        "version": 0.6,
        "generator": "fixture",
        "elements": [
            {"type": "way", "id": 1001, "tags": {"building": "yes", "height": "12"},
             "geometry": rect(47.37010, 8.54010, 47.37030, 8.54040)},
            {"type": "way", "id": 1002, "tags": {"building": "apartments", "building:levels": "4"},
             "geometry": [{"lat": a, "lon": b} for a, b in l_shape]},
            {"type": "way", "id": 1003, "tags": {"building": "house"},
             "geometry": rect(47.37015, 8.54110, 47.37035, 8.54140)},
            {"type": "relation", "id": 2001,
             "tags": {"type": "multipolygon", "building": "yes", "height": "18"},
             "members": [
                 {"type": "way", "ref": 3001, "role": "outer",
                  "geometry": rect(47.37060, 8.54010, 47.37090, 8.54050)},
                 {"type": "way", "ref": 3002, "role": "inner",
                  "geometry": rect(47.37070, 8.54022, 47.37080, 8.54038)},
             ]},
        ],
    }


def tile_image(z, x, y):
    img = Image.new("RGB", (TILE, TILE), ((x * 37) % 200 + 30, (y * 53) % 200 + 30, 90))
    draw = ImageDraw.Draw(img)
    for k in range(0, TILE, 32):
        draw.line([(k, 0), (k, TILE - 1)], fill=(200, 200, 200))
        draw.line([(0, k), (TILE - 1, k)], fill=(200, 200, 200))
    draw.rectangle([64, 64, 191, 191], outline=(20, 20, 20), width=3)
    return img


def main():
    OUT.mkdir(parents=True, exist_ok=True)
    entries = []
    for target in (OUT / "overpass.json", ROOT / "overpass_block.json"):
        target.write_text(json.dumps(overpass(), indent=1) + "\n")
    entries.append({"method": "POST", "url": OVERPASS_URL, "status": 200, "body_file": "overpass.json",
                    "content_type": "application/json"})
    z = choose_zoom()
    x0, y0 = global_px(BBOX[2], BBOX[1], z)
    x1, y1 = global_px(BBOX[0], BBOX[3], z)
    tx0, ty0 = int(math.floor(x0)) // TILE, int(math.floor(y0)) // TILE
    tx1, ty1 = (int(math.ceil(x1)) - 1) // TILE, (int(math.ceil(y1)) - 1) // TILE
    for ty in range(ty0, ty1 + 1):
        for tx in range(tx0, tx1 + 1):
            name = f"tile_{z}_{tx}_{ty}.png"
            tile_image(z, tx, ty).save(OUT / name, optimize=True)
            url = TILE_URL.replace("{z}", str(z)).replace("{x}", str(tx)).replace("{y}", str(ty))
            entries.append({"method": "GET", "url": url, "status": 200, "body_file": name,
                            "content_type": "image/png"})
    (OUT / "index.json").write_text(json.dumps({"entries": entries}, indent=1) + "\n")
    print(f"zoom {z}: {len(entries) - 1} tiles")


if __name__ == "__main__":
    main()
