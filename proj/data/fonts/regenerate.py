#!/usr/bin/env python3
"""Rebuild the embedded font (PixelSans-Regular.ttf).

The font is a merged subset of Noto Sans and Noto Sans JP (both SIL OFL 1.1,
fetched from the @expo-google-fonts npm packages). Layout tables and hinting
are stripped: the in-tree rasterizer does plain cmap lookup + advance
placement. Renamed because "Noto" is an OFL Reserved Font Name.

Usage:
  npm install @expo-google-fonts/noto-sans @expo-google-fonts/noto-sans-jp
  python3 regenerate.py <noto-sans.ttf> <noto-sans-jp.ttf> <out.ttf>
"""
import sys
from fontTools.ttLib import TTFont
from fontTools.subset import Subsetter, Options
from fontTools.merge import Merger

LATIN_RANGES = [
    (0x20, 0x7E),      # ASCII
    (0xA0, 0xFF),      # Latin-1
    (0x100, 0x17F),    # Latin Extended-A
    (0x180, 0x24F),    # Latin Extended-B
    (0x250, 0x2AF),    # IPA
    (0x370, 0x3FF),    # Greek
    (0x400, 0x4FF),    # Cyrillic
    (0x500, 0x52F),    # Cyrillic Supplement
    (0x900, 0x97F),    # Devanagari
    (0x1E00, 0x1EFF),  # Latin Extended Additional
    (0x2010, 0x2027),  # punctuation
    (0x20AC, 0x20AC),  # euro
    (0xFFFD, 0xFFFD),  # replacement character
]

CJK_EXTRA = (
    "日本語你好世界中文字漢汉東京学校言葉水火木金土"
    "一二三四五六七八九十百千万人大小山川田上下左右内外出入口手目耳足"
    "月年時分国生先天気雨雪空海風花草鳥犬猫魚米茶駅道車電話新聞書読"
    "愛心思考知識文化歴史平和自由音楽映画旅行食事朝昼夜春夏秋冬北南西"
)

CJK_RANGES = [
    (0x3000, 0x303F),  # CJK punctuation
    (0x3040, 0x309F),  # hiragana
    (0x30A0, 0x30FF),  # katakana
    (0x2581, 0x2581),  # lower one eighth block (piece marker)
]

DROP = "GSUB,GPOS,GDEF,BASE,JSTF,MATH,gvar,avar,fvar,STAT,meta,vhea,vmtx,VORG,DSIG"


def subset(path, unicodes):
    font = TTFont(path)
    opts = Options()
    opts.drop_tables += DROP.split(",")
    opts.hinting = False
    opts.notdef_outline = True
    opts.ignore_missing_unicodes = True
    opts.layout_features = []
    ss = Subsetter(options=opts)
    ss.populate(unicodes=unicodes)
    ss.subset(font)
    return font


def expand(ranges):
    cps = set()
    for lo, hi in ranges:
        cps.update(range(lo, hi + 1))
    return cps


def main(latin_src, cjk_src, out):
    latin_cps = expand(LATIN_RANGES)
    base = subset(latin_src, latin_cps)
    covered = set(base.getBestCmap())
    cjk_cps = (expand(CJK_RANGES) | {ord(c) for c in CJK_EXTRA}) - covered
    cjk = subset(cjk_src, cjk_cps)

    import tempfile, os
    tmp = tempfile.mkdtemp()
    a, b = os.path.join(tmp, "a.ttf"), os.path.join(tmp, "b.ttf")
    base.save(a)
    cjk.save(b)
    merged = Merger().merge([a, b])

    name = merged["name"]
    for rec in list(name.names):
        if rec.nameID in (1, 3, 4, 6, 16):
            txt = {1: "Pixel Sans", 3: "PixelSans-Regular", 4: "Pixel Sans Regular",
                   6: "PixelSans-Regular", 16: "Pixel Sans"}[rec.nameID]
            name.setName(txt, rec.nameID, rec.platformID, rec.platEncID, rec.langID)
    merged.save(out)
    cmap = merged.getBestCmap()
    print(f"wrote {out}: {merged['maxp'].numGlyphs} glyphs, "
          f"{len(cmap)} codepoints, {os.path.getsize(out)} bytes")


if __name__ == "__main__":
    main(*sys.argv[1:4])
