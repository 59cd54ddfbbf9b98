"""Running capture tasks through the JSON-lines control socket.

The same thing from a shell:

    scent daemon --source synthetic --duration 120 --speed max --socket /tmp/scent.sock &
    scent task --socket /tmp/scent.sock start-features --sink /tmp/f.csv --window 5
    scent task --socket /tmp/scent.sock status
"""

# %%
import os
import tempfile
import threading

from scent.pipeline import SyntheticSource, default_scenario
from scent.service import ControlClient, ControlServer, TaskManager

work = tempfile.mkdtemp(prefix="scent", dir="/tmp")
sock = os.path.join(work, "ctl")

# the source starts pumping when the first task registers
manager = TaskManager(SyntheticSource(default_scenario(duration=120, seed=2), speed=None), autostart=True)
server = ControlServer(sock, manager)
threading.Thread(target=server.serve_forever, daemon=True).start()

# %%
client = ControlClient(sock)
feat = client.request("start_features", sink=f"{work}/f.csv", window=5, features="all")
door = client.request("start_pcap", sink=f"{work}/door.pcap", filter="wpan.src16 == 0x1a05")
bad = client.request("start_pcap", sink=f"{work}/x.pcap", filter="wpan.src16 = 1")
print(feat)
print(door)
print(bad)

# %%
manager.wait_idle(30)
for st in client.request("status")["result"]:
    print(st["task"], st["state"], st["frames_processed"], "processed,", st["frames_dropped"], "dropped")

# %%
for r in (feat, door):
    done = client.request("stop", task=r["result"]["task"])["result"]
    print(done["task"], done["state"], done["reason"], done["queue"])
    client.request("remove", task=r["result"]["task"])

client.close()
server.shutdown()
manager.shutdown()
server.server_close()
