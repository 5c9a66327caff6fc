"""Bidirectional EV charger + home simulator, DERMS control engine, and a
replay harness for the step, sweep, arbitrage, and load-following
experiments."""

from .devsim import (ApplianceProfile, BatteryModel, ChargerModel, ChargerState,
                     HouseModel, ParseError, Scenario, SimClock, Simulation,
                     scenario_load)
from .engine import (Arbitrage, DemandResponse, DrEvent, Engine, EngineConfig,
                     Idle, Manual, Sample, TariffSchedule, TraceRow, ZeroExport,
                     assess_freq_regulation, lockstep, load_trace,
                     ontario_summer_2022, zero_export_setpoint)
from .wire import (CHARGER_MAP, METER_MAP, Encoding, Function, RegisterClient,
                   RegisterFrame, RegisterMap, ScaledValue, WordStore,
                   codec_power, decode_frame, encode_frame, serve_registers)

__version__ = "0.1.0"
