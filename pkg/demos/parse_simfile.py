#!/usr/bin/env python3
"""Parse a Stepmania simfile and round-trip it through canonical JSON."""

from chartgen.charts import parse_canonical, parse_stepmania, serialize_canonical

SIMFILE = """\
#TITLE:Two Gears;
#OFFSET:-0.125;
#BPMS:0.000=120.000,8.000=180.000;
#STOPS:4.000=0.500;
#NOTES:
     dance-single:
     demo:
     Medium:
     5:
     0,0,0,0,0:
0001
0000
1000
0000
,
1001
0000
0000
0000
;
#NOTES:
     dance-single:
     demo:
     Hard:
     8:
     0,0,0,0,0:
1000
0100
0010
0001
0001
0010
0100
1000
,
1111
0000
0000
0000
;
"""

charts = parse_stepmania(SIMFILE)
print(f"parsed {len(charts)} charts")

for chart in charts:
    print()
    print(f"== {chart.difficulty.name} (flag {chart.difficulty.value}) ==")
    print("BPM segments:", chart.tempo.segments)
    print("stops:", chart.tempo.stops)
    print("beat 0 at audio time:", chart.beat_zero)
    print("note times (s):", [round(t, 4) for t in chart.notes])

# Beat-to-time walks through the BPM change at beat 8 and the half-second
# stop at beat 4.  Beat 4 itself lands at the instant the stop begins.
tempo = charts[0].tempo
for beat in (0.0, 4.0, 4.001, 8.0, 10.0):
    print(f"beat {beat:6.3f} -> {tempo.beat_to_time(beat):.4f}s")

# The canonical JSON form is the package's native chart format and the
# round trip is exact.
blob = serialize_canonical(charts[1])
again = parse_canonical(blob)
assert again.notes == charts[1].notes
assert again.tempo == charts[1].tempo
print()
print("canonical round trip exact,", len(blob), "bytes")
