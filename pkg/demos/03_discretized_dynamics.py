"""Build the discretized network model and watch the plant integrate it.

Each implicit time step turns the pipeline PDEs into a sparse block of
algebraic rows (finite volumes for mass, a stationary momentum balance with
friction, node balances, compressor maps).  The plant pins the compressor
powers and marches that block forward with a damped Newton method.
"""
from pathlib import Path

import numpy as np

from gasmpc.css import demand_table, solve_css
from gasmpc.discretize import Horizon, Scaling, SystemBuilder, add_network_horizon
from gasmpc.network import load_network
from gasmpc.plant import PlantSimulator, steady_initial_state

HERE = Path(__file__).resolve().parent
net = load_network(HERE.parent / "src/gasmpc/configs/testnet.json")
K, dt = 24, 3600.0

b = SystemBuilder()
add_network_horizon(b, net, Scaling.for_gas(net.gas), Horizon(1, dt))
system = b.freeze()
kinds = {}
for v in system.var_list:
    kinds[v.kind] = kinds.get(v.kind, 0) + 1
print(f"one implicit step: {system.num_vars} unknowns, "
      f"{len(system.eq_rows)} equality rows")
print("  unknowns by kind:", ", ".join(f"{k}={n}" for k, n in sorted(kinds.items())))

# steady state at the cycle-start demand, then a constant-power hold while
# demand follows its daily profile: linepack drains toward the evening peak
x = steady_initial_state(net, K, dt)
plant = PlantSimulator(net, dt_seconds=dt)
css1 = solve_css(net, 1, dt)
hold = {c.id: css1.power_at(c.id, 0) for c in net.compressors}
demands = demand_table(net, K)

print(f"\nholding steady powers { {k: round(v, 3) for k, v in hold.items()} } MW")
print(f"{'hour':>4} {'total demand':>13} {'min sink p':>11} {'linepack proxy':>15}")
for hour in range(10):
    d = {s: float(demands[s][hour % K]) for s in net.sink_ids}
    x, rep = plant.step(x, hold, d)
    print(f"{hour:>4} {sum(d.values()):>10.2f} kg/s "
          f"{min(rep.sink_pressures.values()):>8.2f} bar "
          f"{float(np.sum(x)):>15.1f}")
print("\nwith fixed powers the state drifts as demand rises; the controllers'")
print("job is to retime compression so the drift never breaches the floors.")
