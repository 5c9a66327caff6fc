"""Register wire protocol: Modbus application-layer subset over TCP framing.

Supports ReadHolding (0x03) and WriteMultiple (0x10) only, which is all the
control engine needs: read measurements, write setpoints and commands.
Values are 16-bit register words; multi-word values are big-endian
(most-significant word at the lower address).
"""
from __future__ import annotations

import socket
import socketserver
import struct
import threading
from dataclasses import dataclass
from enum import IntEnum

PROTOCOL_ID = 0
MBAP_HEADER = struct.Struct(">HHH")  # transaction id, protocol id, length

_WORDS = {}  # struct cache for ">nH" payloads


def _words_struct(n: int) -> struct.Struct:
    s = _WORDS.get(n)
    if s is None:
        s = _WORDS[n] = struct.Struct(f">{n}H")
    return s

MAX_READ_WORDS = 123
MAX_WRITE_WORDS = 120

# Modbus exception codes used by the register servers.
EXC_ILLEGAL_FUNCTION = 0x01
EXC_ILLEGAL_DATA_ADDRESS = 0x02
EXC_ILLEGAL_DATA_VALUE = 0x03

METER_UNIT_ID = 1
CHARGER_UNIT_ID = 2
DEFAULT_METER_PORT = 1502
DEFAULT_CHARGER_PORT = 1503


class Function(IntEnum):
    READ_HOLDING = 0x03
    WRITE_MULTIPLE = 0x10


class WireError(Exception):
    """Base class for wire-level failures."""


class InvalidCount(WireError):
    """Register count outside the allowed bounds for the function."""


class Truncated(WireError):
    """Message shorter than its length field claims."""


class UnsupportedFunction(WireError):
    """Function code outside the supported {0x03, 0x10} subset."""


class MalformedPdu(WireError):
    """Structurally invalid PDU (bad byte count, trailing bytes, ...)."""


class WireTimeout(WireError):
    """No response from the peer within the client timeout."""


class RegisterException(WireError):
    """Protocol exception response from a server (IllegalDataAddress, ...)."""

    def __init__(self, function: int, code: int):
        names = {
            EXC_ILLEGAL_FUNCTION: "IllegalFunction",
            EXC_ILLEGAL_DATA_ADDRESS: "IllegalDataAddress",
            EXC_ILLEGAL_DATA_VALUE: "IllegalDataValue",
        }
        super().__init__(f"{names.get(code, 'Exception')} (code {code}) "
                         f"for function 0x{function:02X}")
        self.function = function
        self.code = code


# ---------------------------------------------------------------------------
# Frames
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class RegisterFrame:
    """One request or response of the register protocol.

    Direction is implied by payload presence: a ReadHolding frame with an
    empty payload is a request, with words it is a response; WriteMultiple
    is the other way around. Read responses do not carry an address on the
    wire, so their canonical form uses start_address 0.
    """

    transaction_id: int
    unit_id: int
    function: Function
    start_address: int
    count: int
    payload: tuple[int, ...] = ()

    def is_request(self) -> bool:
        if self.function == Function.READ_HOLDING:
            return not self.payload
        return bool(self.payload)

    def validate(self) -> None:
        if not 0 <= self.transaction_id <= 0xFFFF:
            raise MalformedPdu(f"transaction id {self.transaction_id} out of range")
        if not 0 <= self.unit_id <= 0xFF:
            raise MalformedPdu(f"unit id {self.unit_id} out of range")
        if not 0 <= self.start_address <= 0xFFFF:
            raise MalformedPdu(f"start address {self.start_address} out of range")
        limit = MAX_READ_WORDS if self.function == Function.READ_HOLDING else MAX_WRITE_WORDS
        if not 1 <= self.count <= limit:
            raise InvalidCount(f"count {self.count} outside [1, {limit}] "
                               f"for function 0x{self.function:02X}")
        if self.payload:
            if len(self.payload) != self.count:
                raise MalformedPdu(f"payload holds {len(self.payload)} words, count says {self.count}")
            if any(not 0 <= w <= 0xFFFF for w in self.payload):
                raise MalformedPdu("payload word out of 16-bit range")


def encode_frame(frame: RegisterFrame) -> bytes:
    """Serialize a frame to MBAP header + PDU bytes."""
    frame.validate()
    fc = frame.function
    if fc == Function.READ_HOLDING:
        if frame.is_request():
            pdu = struct.pack(">BHH", fc, frame.start_address, frame.count)
        else:
            pdu = struct.pack(">BB", fc, 2 * frame.count)
            pdu += _words_struct(frame.count).pack(*frame.payload)
    else:
        if frame.is_request():
            pdu = struct.pack(">BHHB", fc, frame.start_address, frame.count, 2 * frame.count)
            pdu += _words_struct(frame.count).pack(*frame.payload)
        else:
            pdu = struct.pack(">BHH", fc, frame.start_address, frame.count)
    header = MBAP_HEADER.pack(frame.transaction_id, PROTOCOL_ID, len(pdu) + 1)
    return header + bytes([frame.unit_id]) + pdu


def encode_exception(transaction_id: int, unit_id: int, function: int, code: int) -> bytes:
    pdu = struct.pack(">BB", (function & 0x7F) | 0x80, code)
    header = MBAP_HEADER.pack(transaction_id, PROTOCOL_ID, len(pdu) + 1)
    return header + bytes([unit_id]) + pdu


def decode_frame(data: bytes) -> RegisterFrame:
    """Parse one complete MBAP + PDU message; inverse of encode_frame.

    Raises RegisterException when the message is a protocol exception
    response, so client code surfaces server-side errors naturally.
    """
    if len(data) < 8:
        raise Truncated(f"message of {len(data)} bytes cannot hold a PDU")
    txn, proto, length = MBAP_HEADER.unpack(data[:6])
    if proto != PROTOCOL_ID:
        raise MalformedPdu(f"protocol id {proto}, expected 0")
    if length > len(data) - 6:
        raise Truncated(f"length field {length} exceeds {len(data) - 6} bytes available")
    if length < len(data) - 6:
        raise MalformedPdu(f"{len(data) - 6 - length} trailing bytes after PDU")
    unit = data[6]
    pdu = data[7:]
    fc = pdu[0]
    if fc & 0x80 and (fc & 0x7F) in (Function.READ_HOLDING, Function.WRITE_MULTIPLE):
        if len(pdu) != 2:
            raise MalformedPdu("exception PDU must be 2 bytes")
        raise RegisterException(fc & 0x7F, pdu[1])
    if fc not in (Function.READ_HOLDING, Function.WRITE_MULTIPLE):
        raise UnsupportedFunction(f"function code 0x{fc:02X} not in {{0x03, 0x10}}")

    if fc == Function.READ_HOLDING:
        if len(pdu) == 5:  # request: addr + count
            addr, count = struct.unpack(">HH", pdu[1:])
            frame = RegisterFrame(txn, unit, Function.READ_HOLDING, addr, count)
        else:  # response: byte count + words
            if len(pdu) < 2:
                raise MalformedPdu("read response too short")
            bc = pdu[1]
            if bc == 0 or bc % 2 or len(pdu) != 2 + bc:
                raise MalformedPdu(f"read response byte count {bc} does not match PDU")
            words = _words_struct(bc // 2).unpack(pdu[2:])
            frame = RegisterFrame(txn, unit, Function.READ_HOLDING, 0, bc // 2, words)
    else:
        if len(pdu) == 5:  # response: addr + count echo
            addr, count = struct.unpack(">HH", pdu[1:])
            frame = RegisterFrame(txn, unit, Function.WRITE_MULTIPLE, addr, count)
        else:
            if len(pdu) < 6:
                raise MalformedPdu("write request too short")
            addr, count, bc = struct.unpack(">HHB", pdu[1:6])
            if not 1 <= count <= MAX_WRITE_WORDS:
                raise InvalidCount(f"write count {count} outside [1, {MAX_WRITE_WORDS}]")
            if bc != 2 * count or len(pdu) != 6 + bc:
                raise MalformedPdu(f"write byte count {bc} does not match count {count}")
            words = _words_struct(count).unpack(pdu[6:])
            frame = RegisterFrame(txn, unit, Function.WRITE_MULTIPLE, addr, count, words)
    frame.validate()
    return frame


# ---------------------------------------------------------------------------
# Value codecs
# ---------------------------------------------------------------------------

class Encoding(IntEnum):
    POWER_W_I32 = 0     # signed watts, 2 words, 1 W per LSB
    CURRENT_MA_I32 = 1  # signed milliamps, 2 words
    SOC_TENTH_PCT_U16 = 2
    VOLTS_TENTH_V_U16 = 3
    ENUM_U16 = 4


ENCODING_WIDTH = {
    Encoding.POWER_W_I32: 2,
    Encoding.CURRENT_MA_I32: 2,
    Encoding.SOC_TENTH_PCT_U16: 1,
    Encoding.VOLTS_TENTH_V_U16: 1,
    Encoding.ENUM_U16: 1,
}

ENCODING_UNIT = {
    Encoding.POWER_W_I32: "kW",
    Encoding.CURRENT_MA_I32: "A",
    Encoding.SOC_TENTH_PCT_U16: "%",
    Encoding.VOLTS_TENTH_V_U16: "V",
    Encoding.ENUM_U16: "",
}


def i32_to_words(raw: int) -> tuple[int, int]:
    raw &= 0xFFFFFFFF
    return (raw >> 16) & 0xFFFF, raw & 0xFFFF


def words_to_i32(hi: int, lo: int) -> int:
    raw = ((hi & 0xFFFF) << 16) | (lo & 0xFFFF)
    return raw - 0x100000000 if raw >= 0x80000000 else raw


def codec_power(kw: float) -> tuple[int, int]:
    """kW -> (msw, lsw) at 1 W resolution, two's complement."""
    if abs(kw) > 2e6:
        raise ValueError(f"power {kw} kW outside encodable range")
    return i32_to_words(round(kw * 1000))


def power_from_words(hi: int, lo: int) -> float:
    return words_to_i32(hi, lo) / 1000.0


def encode_value(encoding: Encoding, value: float) -> tuple[int, ...]:
    if encoding == Encoding.POWER_W_I32:
        return codec_power(value)
    if encoding == Encoding.CURRENT_MA_I32:
        return i32_to_words(round(value * 1000))
    if encoding == Encoding.SOC_TENTH_PCT_U16:
        raw = round(value * 10)
        if not 0 <= raw <= 1000:
            raise ValueError(f"SOC {value}% outside [0, 100]")
        return (raw,)
    if encoding == Encoding.VOLTS_TENTH_V_U16:
        raw = round(value * 10)
        if not 0 <= raw <= 0xFFFF:
            raise ValueError(f"voltage {value} V not encodable")
        return (raw,)
    return (int(value) & 0xFFFF,)


def decode_value(encoding: Encoding, words: tuple[int, ...] | list[int]) -> float:
    if len(words) != ENCODING_WIDTH[encoding]:
        raise ValueError(f"{encoding.name} needs {ENCODING_WIDTH[encoding]} words, got {len(words)}")
    if encoding == Encoding.POWER_W_I32:
        return power_from_words(*words)
    if encoding == Encoding.CURRENT_MA_I32:
        return words_to_i32(*words) / 1000.0
    if encoding == Encoding.SOC_TENTH_PCT_U16:
        return words[0] / 10.0
    if encoding == Encoding.VOLTS_TENTH_V_U16:
        return words[0] / 10.0
    return float(words[0])


@dataclass(frozen=True)
class ScaledValue:
    """A register value with both raw and engineering representations."""

    kind: Encoding
    raw: int

    @classmethod
    def from_value(cls, kind: Encoding, value: float) -> "ScaledValue":
        words = encode_value(kind, value)
        raw = words_to_i32(*words) if len(words) == 2 else words[0]
        return cls(kind, raw)

    @classmethod
    def from_words(cls, kind: Encoding, words: tuple[int, ...]) -> "ScaledValue":
        raw = words_to_i32(*words) if len(words) == 2 else words[0]
        return cls(kind, raw)

    @property
    def words(self) -> tuple[int, ...]:
        if ENCODING_WIDTH[self.kind] == 2:
            return i32_to_words(self.raw)
        return (self.raw & 0xFFFF,)

    @property
    def value(self) -> float:
        return decode_value(self.kind, self.words)

    @property
    def unit(self) -> str:
        return ENCODING_UNIT[self.kind]


# ---------------------------------------------------------------------------
# Register maps
# ---------------------------------------------------------------------------

class Access(IntEnum):
    RO = 0
    RW = 1


@dataclass(frozen=True)
class MapEntry:
    address: int
    encoding: Encoding
    access: Access
    name: str

    @property
    def width_words(self) -> int:
        return ENCODING_WIDTH[self.encoding]


class RegisterMap:
    """Sorted, non-overlapping register layout for one device."""

    def __init__(self, entries: list[MapEntry] | tuple[MapEntry, ...]):
        self.entries = tuple(sorted(entries, key=lambda e: e.address))
        self._by_word: dict[int, MapEntry] = {}
        last_end = -1
        for e in self.entries:
            if e.address <= last_end:
                raise ValueError(f"register map entries overlap at 0x{e.address:04X}")
            last_end = e.address + e.width_words - 1
            for a in range(e.address, e.address + e.width_words):
                self._by_word[a] = e
        self._by_name = {e.name: e for e in self.entries}

    def __iter__(self):
        return iter(self.entries)

    def entry(self, name: str) -> MapEntry:
        return self._by_name[name]

    def entry_at(self, address: int) -> MapEntry | None:
        return self._by_word.get(address)

    def covers(self, start: int, count: int) -> bool:
        return all(a in self._by_word for a in range(start, start + count))

    def writable(self, start: int, count: int) -> bool:
        return all(self._by_word[a].access == Access.RW
                   for a in range(start, start + count))


# Normative maps for the simulated devices. Import-positive at the meter,
# charging-positive at the charger.
METER_MAP = RegisterMap([
    MapEntry(0x0000, Encoding.POWER_W_I32, Access.RO, "net_power"),
    MapEntry(0x0002, Encoding.CURRENT_MA_I32, Access.RO, "line_current"),
])

CHARGER_MAP = RegisterMap([
    MapEntry(0x0100, Encoding.ENUM_U16, Access.RW, "remote_enable"),   # 0 local / 1 remote
    MapEntry(0x0101, Encoding.ENUM_U16, Access.RW, "run_command"),     # 0 stop / 1 run
    MapEntry(0x0102, Encoding.POWER_W_I32, Access.RW, "setpoint"),
    MapEntry(0x0104, Encoding.POWER_W_I32, Access.RO, "ev_power"),
    MapEntry(0x0106, Encoding.SOC_TENTH_PCT_U16, Access.RO, "soc"),
    MapEntry(0x0107, Encoding.ENUM_U16, Access.RO, "charger_state"),
    MapEntry(0x0108, Encoding.VOLTS_TENTH_V_U16, Access.RO, "dc_voltage"),
])


# ---------------------------------------------------------------------------
# Backing store and server
# ---------------------------------------------------------------------------

class WordStore:
    """Word-addressed register storage with per-frame atomicity.

    Reads and writes each run under one lock acquisition, so a multi-word
    value can never be observed torn. An optional write hook lets a device
    model capture commands; it runs under the lock.
    """

    def __init__(self, reg_map: RegisterMap):
        self.map = reg_map
        self._lock = threading.Lock()
        self._words = {a: 0 for e in reg_map for a in range(e.address, e.address + e.width_words)}
        self.on_write = None  # callable(start, words) or None

    def read(self, start: int, count: int) -> list[int]:
        with self._lock:
            return [self._words[a] for a in range(start, start + count)]

    def write(self, start: int, words: list[int] | tuple[int, ...]) -> None:
        with self._lock:
            for i, w in enumerate(words):
                self._words[start + i] = w & 0xFFFF
            if self.on_write is not None:
                self.on_write(start, tuple(words))

    def set_value(self, name: str, value: float) -> None:
        e = self.map.entry(name)
        self.write(e.address, encode_value(e.encoding, value))

    def set_values(self, **values: float) -> None:
        """Publish several engineering values in one atomic update."""
        with self._lock:
            for name, value in values.items():
                e = self.map.entry(name)
                for i, w in enumerate(encode_value(e.encoding, value)):
                    self._words[e.address + i] = w

    def set_words(self, words: dict[int, int]) -> None:
        """Publish raw words in one atomic update (hot path for simulators)."""
        with self._lock:
            self._words.update(words)

    def get_value(self, name: str) -> float:
        e = self.map.entry(name)
        return decode_value(e.encoding, self.read(e.address, e.width_words))


class _RequestHandler(socketserver.BaseRequestHandler):
    def setup(self):
        self.request.setsockopt(socket.IPPROTO_TCP, socket.TCP_NODELAY, 1)
        self._buf = b""
        self.server.track(self.request)  # type: ignore[attr-defined]

    def finish(self):
        self.server.untrack(self.request)  # type: ignore[attr-defined]

    def _recv_exact(self, n: int) -> bytes | None:
        while len(self._buf) < n:
            chunk = self.request.recv(4096)
            if not chunk:
                return None
            self._buf += chunk
        out, self._buf = self._buf[:n], self._buf[n:]
        return out

    def handle(self):
        server: RegisterServer = self.server  # type: ignore[assignment]
        while True:
            header = self._recv_exact(6)
            if header is None:
                return
            txn, proto, length = MBAP_HEADER.unpack(header)
            if proto != PROTOCOL_ID or length < 2:
                return  # unframeable; drop the connection
            body = self._recv_exact(length)
            if body is None:
                return
            try:
                frame = decode_frame(header + body)
            except InvalidCount:
                self.request.sendall(encode_exception(txn, body[0], body[1], EXC_ILLEGAL_DATA_VALUE))
                continue
            except UnsupportedFunction:
                self.request.sendall(encode_exception(txn, body[0], body[1], EXC_ILLEGAL_FUNCTION))
                continue
            except WireError:
                return
            self.request.sendall(server.respond(frame))


class RegisterServer(socketserver.ThreadingTCPServer):
    """Serves register maps at one TCP endpoint, one word store per unit id."""

    allow_reuse_address = True
    daemon_threads = True

    def __init__(self, units: dict[int, WordStore], host: str = "127.0.0.1",
                 port: int = 0):
        super().__init__((host, port), _RequestHandler)
        self.units = dict(units)
        self._thread: threading.Thread | None = None
        self._conns: set = set()
        self._conns_lock = threading.Lock()

    def track(self, sock) -> None:
        with self._conns_lock:
            self._conns.add(sock)

    def untrack(self, sock) -> None:
        with self._conns_lock:
            self._conns.discard(sock)

    @property
    def port(self) -> int:
        return self.server_address[1]

    def respond(self, frame: RegisterFrame) -> bytes:
        def exc(code: int) -> bytes:
            return encode_exception(frame.transaction_id, frame.unit_id, frame.function, code)

        store = self.units.get(frame.unit_id)
        if store is None:
            return exc(EXC_ILLEGAL_DATA_ADDRESS)
        reg_map = store.map
        if frame.function == Function.READ_HOLDING and frame.is_request():
            if not reg_map.covers(frame.start_address, frame.count):
                return exc(EXC_ILLEGAL_DATA_ADDRESS)
            words = store.read(frame.start_address, frame.count)
            return encode_frame(RegisterFrame(frame.transaction_id, frame.unit_id,
                                              Function.READ_HOLDING, 0, frame.count,
                                              tuple(words)))
        if frame.function == Function.WRITE_MULTIPLE and frame.is_request():
            if not reg_map.covers(frame.start_address, frame.count):
                return exc(EXC_ILLEGAL_DATA_ADDRESS)
            if not reg_map.writable(frame.start_address, frame.count):
                return exc(EXC_ILLEGAL_FUNCTION)
            store.write(frame.start_address, frame.payload)
            return encode_frame(RegisterFrame(frame.transaction_id, frame.unit_id,
                                              Function.WRITE_MULTIPLE,
                                              frame.start_address, frame.count))
        return exc(EXC_ILLEGAL_FUNCTION)

    def start(self) -> "RegisterServer":
        self._thread = threading.Thread(
            target=lambda: self.serve_forever(poll_interval=0.05), daemon=True)
        self._thread.start()
        return self

    def close(self) -> None:
        self.shutdown()
        self.server_close()
        with self._conns_lock:
            conns = list(self._conns)
        for sock in conns:  # drop live sessions so clients see the loss
            try:
                sock.shutdown(socket.SHUT_RDWR)
            except OSError:
                pass


def serve_registers(reg_map: RegisterMap, store: WordStore | None = None,
                    host: str = "127.0.0.1", port: int = 0,
                    unit_id: int = 1) -> RegisterServer:
    """Start a single-device register server; port 0 binds an ephemeral port."""
    if store is None:
        store = WordStore(reg_map)
    elif store.map is not reg_map:
        raise ValueError("store was built for a different register map")
    return RegisterServer({unit_id: store}, host, port).start()


def serve_units(units: dict[int, WordStore], host: str = "127.0.0.1",
                port: int = 0) -> RegisterServer:
    """Start a gateway-style server hosting several units at one endpoint."""
    return RegisterServer(units, host, port).start()


# ---------------------------------------------------------------------------
# Client
# ---------------------------------------------------------------------------

class RegisterClient:
    """Blocking word-level client with a persistent connection.

    Reconnects lazily after any transport failure; raises WireTimeout when
    the peer does not answer in time and RegisterException on protocol
    exception responses.
    """

    def __init__(self, host: str, port: int, unit_id: int, timeout: float = 1.0):
        self.host = host
        self.port = port
        self.unit_id = unit_id
        self.timeout = timeout
        self._sock: socket.socket | None = None
        self._buf = b""
        self._txn = 0

    def connect(self) -> None:
        if self._sock is not None:
            return
        sock = socket.create_connection((self.host, self.port), timeout=self.timeout)
        sock.setsockopt(socket.IPPROTO_TCP, socket.TCP_NODELAY, 1)
        self._sock = sock
        self._buf = b""

    def close(self) -> None:
        if self._sock is not None:
            try:
                self._sock.close()
            finally:
                self._sock = None
                self._buf = b""

    def _recv_exact(self, n: int) -> bytes:
        assert self._sock is not None
        while len(self._buf) < n:
            chunk = self._sock.recv(4096)
            if not chunk:
                raise ConnectionError("peer closed the connection")
            self._buf += chunk
        out, self._buf = self._buf[:n], self._buf[n:]
        return out

    def send(self, frame: RegisterFrame) -> RegisterFrame:
        """Transmit a request without waiting; pair with receive()."""
        try:
            self.connect()
            assert self._sock is not None
            self._sock.sendall(encode_frame(frame))
        except socket.timeout as e:
            self.close()
            raise WireTimeout(f"{self.host}:{self.port} did not accept the request") from e
        except OSError:
            self.close()
            raise
        return frame

    def receive(self, sent: RegisterFrame) -> RegisterFrame:
        try:
            header = self._recv_exact(6)
            _, _, length = MBAP_HEADER.unpack(header)
            body = self._recv_exact(length)
        except socket.timeout as e:
            self.close()
            raise WireTimeout(f"{self.host}:{self.port} did not answer within {self.timeout}s") from e
        except OSError:
            self.close()
            raise
        try:
            reply = decode_frame(header + body)
        except RegisterException:
            raise
        except WireError:
            self.close()
            raise
        if reply.transaction_id != sent.transaction_id or reply.function != sent.function:
            self.close()
            raise MalformedPdu("response does not match request")
        return reply

    def _next_txn(self) -> int:
        self._txn = (self._txn + 1) & 0xFFFF
        return self._txn

    def read_request(self, start: int, count: int,
                     unit_id: int | None = None) -> RegisterFrame:
        """Fire a read without waiting for the reply."""
        unit = self.unit_id if unit_id is None else unit_id
        return self.send(RegisterFrame(self._next_txn(), unit,
                                       Function.READ_HOLDING, start, count))

    def read_many(self, requests: list[tuple[int, int, int]]) -> list[RegisterFrame]:
        """Pipeline several (start, count, unit_id) reads in one transmission;
        collect each with read_reply in order."""
        frames = [RegisterFrame(self._next_txn(), unit, Function.READ_HOLDING,
                                start, count)
                  for start, count, unit in requests]
        data = b"".join(encode_frame(f) for f in frames)
        try:
            self.connect()
            assert self._sock is not None
            self._sock.sendall(data)
        except socket.timeout as e:
            self.close()
            raise WireTimeout(f"{self.host}:{self.port} did not accept the request") from e
        except OSError:
            self.close()
            raise
        return frames

    def read_reply(self, sent: RegisterFrame) -> list[int]:
        reply = self.receive(sent)
        if reply.count != sent.count:
            raise MalformedPdu(f"asked for {sent.count} words, got {reply.count}")
        return list(reply.payload)

    def read(self, start: int, count: int, unit_id: int | None = None) -> list[int]:
        return self.read_reply(self.read_request(start, count, unit_id))

    def write(self, start: int, words: list[int] | tuple[int, ...],
              unit_id: int | None = None) -> None:
        unit = self.unit_id if unit_id is None else unit_id
        frame = RegisterFrame(self._next_txn(), unit, Function.WRITE_MULTIPLE,
                              start, len(words), tuple(words))
        reply = self.receive(self.send(frame))
        if reply.start_address != start or reply.count != len(words):
            raise MalformedPdu("write echo does not match request")
