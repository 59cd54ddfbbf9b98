"""Dissecting 802.15.4 frames and scoping them with display filters."""

# %%
from scent.codec import parse_mac_frame, parse_nwk_header, compute_fcs
from scent.filters import parse_filter, pretty_print, eval_filter, field_values
from scent.pipeline import default_scenario, generate_scenario

# one minute of the default 8-device network
frames = list(generate_scenario(default_scenario(duration=60, seed=0)))
print(len(frames), "frames")

# %%
raw = frames[0]
mac = parse_mac_frame(raw)
nwk = parse_nwk_header(mac)
print(mac.frame_type.name, f"src=0x{mac.src16:04x} dst=0x{mac.dst16:04x} pan=0x{mac.dst_pan:04x}", mac.fcs_ok.value)
print(nwk)
print(field_values(mac, nwk, len(raw.data)))

# FCS sanity: the standard check string
print(hex(compute_fcs(b"123456789")))

# %%
expr = parse_filter("wpan.src16 == 0x1a07 or (wpan.frame_type == 2 and frame.len < 10)")
print(pretty_print(expr))

hits = [f for f in frames if eval_filter(expr, (m := parse_mac_frame(f)), parse_nwk_header(m), len(f.data))]
print(len(hits), "frames match")

# %%
# absent fields never match a comparison; a bare field name tests presence
ack = next(parse_mac_frame(f) for f in frames if parse_mac_frame(f).frame_type == 2)
print(eval_filter(parse_filter("zbee_nwk.src == 0x1234"), ack),
      eval_filter(parse_filter("!zbee_nwk.src"), ack))
