"""Load the bundled test network, validate it, and probe the gas physics.

The network file describes a cascade of three compressor stations feeding
five sinks through five pipelines.  Every sink owes its customers a 41 bar
minimum delivery pressure; demands follow day-cycle sinusoids with a +/-10%
uncertainty envelope.
"""
from pathlib import Path

from gasmpc.network import (
    compressor_power,
    density_from_pressure,
    equation_of_state,
    load_network,
    validate_network,
)

HERE = Path(__file__).resolve().parent
net = load_network(HERE.parent / "src/gasmpc/configs/testnet.json")

print(f"network: {len(net.nodes)} nodes, {len(net.pipes)} pipes, "
      f"{len(net.compressors)} compressors")
for n in net.nodes:
    extra = ""
    if n.fixed_pressure is not None:
        extra = f"  fixed at {n.fixed_pressure/1e5:.0f} bar"
    print(f"  node {n.id:<4} {n.kind.value:<22} "
          f"[{n.pressure_min/1e5:.0f}, {n.pressure_max/1e5:.0f}] bar{extra}")
for p in net.pipes:
    print(f"  pipe {p.id}: {p.from_node} -> {p.to_node}, {p.length/1e3:.0f} km, "
          f"{p.num_cells} cells of {p.cell_length/1e3:.1f} km")
for c in net.compressors:
    print(f"  compressor {c.id}: {c.from_node} -> {c.to_node}, "
          f"ratio in [{c.beta_min}, {c.beta_max}], "
          f"max {c.power_max/1e6:.0f} MW, efficiency {c.efficiency}")

report = validate_network(net)
print(f"\nvalidation: {report}")

print("\ngas state samples:")
rho = density_from_pressure(net.gas, 50e5)
print(f"  density at 50 bar: {rho:.3f} kg/m^3")
print(f"  round trip pressure: {equation_of_state(net.gas, rho)/1e5:.6f} bar")
for flow in (10.0, 30.0, 50.0):
    for beta in (1.2, 1.5):
        w = compressor_power(net.gas, flow, beta, 0.85)
        print(f"  power to push {flow:4.0f} kg/s at ratio {beta}: {w/1e6:7.3f} MW")

print("\ndemand profiles (kg/s):")
for sink in net.sink_ids:
    prof = net.demands[sink]
    lo, hi = prof.values.min(), prof.values.max()
    print(f"  {sink}: mean {prof.values.mean():.2f}, swing [{lo:.2f}, {hi:.2f}], "
          f"envelope [{prof.envelope_min.min():.2f}, {prof.envelope_max.max():.2f}]")
