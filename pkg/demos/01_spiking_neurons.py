"""
Rate coding and spiking neurons
===============================

A pixel value becomes a train of signed spikes, and an integrate-and-fire
neuron turns an input current back into a firing rate.
"""
import numpy as np

from snnadv import snn
from snnadv.snn import NeuronParams, NeuronState
from snnadv.tensor import SeededRng

# Poisson encoding: each step a pixel fires with probability |x|
x = np.array([-0.8, -0.2, 0.0, 0.4, 1.0])
train = snn.poisson_encode(x, 1000, SeededRng(0))
print("pixels        ", x)
print("decoded rates ", snn.rate_decode(train).round(3))

# a short raster for the first 40 steps
for row, value in zip(train.events[:40].T, x):
    print(f"{value:+.1f} ", "".join({1: "|", -1: "-", 0: "."}[int(s)] for s in row))

# an IF neuron driven by a constant current fires every ceil(v_th / c) steps
p = NeuronParams.if_(1.0, reset="zero")
state = NeuronState(np.zeros(3))
currents = np.array([0.25, 0.4, 0.9])
spikes = []
for _ in range(20):
    state, s = snn.neuron_step(state, currents, p)
    spikes.append(s)
spikes = np.array(spikes)
for c, row in zip(currents, spikes.T):
    print(f"I={c:.2f}", "".join("|" if s else "." for s in row), "period", int(np.ceil(1 / c)))

# a leaky neuron forgets: below the rheobase it never reaches threshold
tau = 20.0
lam = np.exp(-1 / tau)
for c in (0.9 * (1 - lam), 1.2 * (1 - lam)):
    state = NeuronState(np.zeros(1))
    count = 0
    for _ in range(500):
        state, s = snn.neuron_step(state, np.array([c]), NeuronParams.lif(1.0, tau))
        count += int(s[0])
    print(f"LIF tau={tau:g}, I={c:.4f}: {count} spikes in 500 steps")

# the activation trace low-pass filters a spike train
trace = snn.activation_trace(spikes[:, 1:2], tau=5.0, T=20)
print("trace of the I=0.4 neuron:", trace.a[:, 0].round(3))
