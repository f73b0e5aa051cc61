import struct

import numpy as np
import pytest

from netwarden import pcap
from netwarden.errors import (
    BadMagic,
    FragmentContinuation,
    MalformedHeader,
    NonIP,
    TruncatedHeader,
    UnsupportedLinkType,
)

from conftest import (
    build_global_header,
    build_record,
    eth_header,
    golden_syn_frame,
    golden_udp_frame,
    ipv4_header,
    tcp_header,
    udp_header,
)


class TestDecodeFrame:
    def test_golden_syn(self, syn_frame):
        assert len(syn_frame) == 54  # 14 + 20 + 20
        rec = pcap.decode_frame(syn_frame, pcap.LINKTYPE_ETHERNET, ts=1.0)
        assert rec.protocol == 6
        assert rec.tcp_flags == pcap.TCP_SYN
        assert rec.payload_len == 0
        assert rec.total_len == 54
        assert rec.src_ip == "10.0.0.1" and rec.dst_ip == "10.0.0.2"
        assert rec.src_port == 5000 and rec.dst_port == 80
        assert rec.tcp_window == 14600
        assert rec.ttl == 64

    def test_golden_udp(self, udp_frame):
        assert len(udp_frame) == 42  # 14 + 20 + 8
        rec = pcap.decode_frame(udp_frame, pcap.LINKTYPE_ETHERNET)
        assert rec.protocol == 17
        assert rec.l4_header_len == 8
        assert rec.payload_len == 0
        assert rec.total_len == 42

    def test_short_ipv4_frame_malformed(self):
        # ihl says 20 bytes but only 16 IP bytes are present
        frame = eth_header() + ipv4_header(40, 6)[:16]
        with pytest.raises(MalformedHeader):
            pcap.decode_frame(frame, pcap.LINKTYPE_ETHERNET)

    def test_synack_flags(self):
        frame = eth_header() + ipv4_header(40, 6) + tcp_header(flags=0x12)
        rec = pcap.decode_frame(frame, pcap.LINKTYPE_ETHERNET)
        assert rec.tcp_flags == pcap.TCP_SYN | pcap.TCP_ACK

    @pytest.mark.parametrize("flags_byte", range(0, 256, 17))
    def test_flag_popcount_matches_byte13(self, flags_byte):
        frame = eth_header() + ipv4_header(40, 6) \
            + tcp_header(flags=flags_byte)
        rec = pcap.decode_frame(frame, pcap.LINKTYPE_ETHERNET)
        assert bin(rec.tcp_flags).count("1") == bin(flags_byte).count("1")

    def test_non_ip_ethertype(self):
        frame = eth_header(ethertype=0x0806) + b"\x00" * 28  # ARP
        with pytest.raises(NonIP):
            pcap.decode_frame(frame, pcap.LINKTYPE_ETHERNET)

    def test_vlan_single_level(self):
        inner = ipv4_header(40, 6) + tcp_header()
        frame = eth_header(ethertype=0x8100) + struct.pack("!HH", 0, 0x0800)\
            + inner
        rec = pcap.decode_frame(frame, pcap.LINKTYPE_ETHERNET)
        assert rec.protocol == 6
        assert rec.link_header_len == 18

    def test_vlan_nested_skipped(self):
        frame = eth_header(ethertype=0x8100) \
            + struct.pack("!HH", 0, 0x8100) + b"\x00" * 40
        with pytest.raises(NonIP):
            pcap.decode_frame(frame, pcap.LINKTYPE_ETHERNET)

    def test_fragment_continuation(self):
        frame = eth_header() + ipv4_header(100, 17, frag_field=0x0005) \
            + b"\x00" * 80
        with pytest.raises(FragmentContinuation):
            pcap.decode_frame(frame, pcap.LINKTYPE_ETHERNET)

    def test_first_fragment_decodes(self):
        # MF set, offset 0: the L4 header is present
        frame = eth_header() + ipv4_header(28, 17, frag_field=0x2000) \
            + udp_header()
        rec = pcap.decode_frame(frame, pcap.LINKTYPE_ETHERNET)
        assert rec.protocol == 17

    def test_raw_ip_link(self):
        frame = ipv4_header(28, 17) + udp_header()
        rec = pcap.decode_frame(frame, pcap.LINKTYPE_RAW_IP)
        assert rec.link_header_len == 0
        assert rec.total_len == 28

    def test_ipv4_options(self):
        # ihl=6: 24-byte IP header
        frame = eth_header() + ipv4_header(44, 6, ihl=6) + tcp_header()
        rec = pcap.decode_frame(frame, pcap.LINKTYPE_ETHERNET)
        assert rec.ip_header_len == 24
        assert rec.payload_len == 0

    def test_tcp_options(self):
        # data offset 8 words: 32-byte TCP header
        frame = eth_header() + ipv4_header(52, 6) \
            + tcp_header(offset_words=8)
        rec = pcap.decode_frame(frame, pcap.LINKTYPE_ETHERNET)
        assert rec.l4_header_len == 32
        assert rec.payload_len == 0

    def test_unknown_l4_protocol(self):
        frame = eth_header() + ipv4_header(36, 47) + b"\x00" * 16  # GRE
        rec = pcap.decode_frame(frame, pcap.LINKTYPE_ETHERNET)
        assert rec.protocol == 47
        assert rec.l4_header_len == 0
        assert rec.payload_len == 16
        assert rec.src_port == 0 and rec.dst_port == 0

    def test_ipv6_tcp(self):
        payload = tcp_header()
        hdr = struct.pack("!IHBB16s16s", 0x60000000, len(payload), 6, 61,
                          b"\x20\x01\x0d\xb8" + b"\x00" * 12,
                          b"\x20\x01\x0d\xb8" + b"\x00" * 11 + b"\x01")
        rec = pcap.decode_frame(eth_header(0x86DD) + hdr + payload,
                                pcap.LINKTYPE_ETHERNET)
        assert rec.protocol == 6
        assert rec.ip_header_len == 40
        assert rec.ttl == 61
        assert rec.payload_len == 0

    def test_icmp(self):
        frame = eth_header() + ipv4_header(28, 1) \
            + struct.pack("!BBHI", 8, 0, 0, 0)
        rec = pcap.decode_frame(frame, pcap.LINKTYPE_ETHERNET)
        assert rec.protocol == 1
        assert rec.src_port == 0 and rec.dst_port == 0
        assert rec.tcp_flags is None and rec.tcp_window is None

    def test_never_reads_past_caplen(self, syn_frame):
        # decoding a truncated view must fail, not read stale memory
        with pytest.raises(MalformedHeader):
            pcap.decode_frame(memoryview(syn_frame)[:40],
                              pcap.LINKTYPE_ETHERNET)


class TestCaptureReader:
    def write(self, tmp_path, body: bytes, header: bytes | None = None):
        path = tmp_path / "t.pcap"
        path.write_bytes((header if header is not None
                          else build_global_header()) + body)
        return str(path)

    def test_empty_capture(self, tmp_path):
        path = self.write(tmp_path, b"")
        reader = pcap.open_capture(path)
        assert list(reader) == []
        assert reader.summary.frames_read == 0
        assert reader.summary.decoded == 0

    def test_single_syn(self, tmp_path, syn_frame):
        path = self.write(tmp_path, build_record(10, 500000, syn_frame))
        recs = list(pcap.open_capture(path))
        assert len(recs) == 1
        assert recs[0].ts == 10.5
        assert recs[0].tcp_flags == pcap.TCP_SYN

    def test_bad_magic(self, tmp_path):
        path = tmp_path / "bad.pcap"
        path.write_bytes(b"\x00" * 40)
        with pytest.raises(BadMagic):
            pcap.open_capture(path)

    def test_unsupported_link_type(self, tmp_path):
        path = self.write(tmp_path, b"",
                          header=build_global_header(link_type=105))
        with pytest.raises(UnsupportedLinkType):
            pcap.open_capture(path)

    def test_truncated_record_yields_then_raises(self, tmp_path, syn_frame,
                                                 udp_frame):
        body = build_record(1, 0, syn_frame) \
            + build_record(2, 0, udp_frame)[:-5]
        path = self.write(tmp_path, body)
        reader = pcap.open_capture(path)
        it = iter(reader)
        first = next(it)
        assert first.protocol == 6
        with pytest.raises(TruncatedHeader):
            list(it)

    @pytest.mark.parametrize("endian,magic_ns", [("<", False), (">", False),
                                                 ("<", True), (">", True)])
    def test_all_four_magics(self, tmp_path, syn_frame, endian, magic_ns):
        magic = pcap.MAGIC_NS_BE if magic_ns else pcap.MAGIC_US_BE
        sub = 123456789 if magic_ns else 123456
        body = build_record(7, sub, syn_frame, endian=endian)
        path = self.write(tmp_path, body,
                          header=build_global_header(magic, endian))
        recs = list(pcap.open_capture(path))
        assert len(recs) == 1
        assert recs[0].ts == pytest.approx(7.123456, abs=1e-9)

    def test_reorder_within_horizon(self, tmp_path, syn_frame, udp_frame):
        body = build_record(10, 500000, syn_frame) \
            + build_record(10, 100000, udp_frame) \
            + build_record(11, 0, udp_frame)
        path = self.write(tmp_path, body)
        recs = list(pcap.open_capture(path))
        ts = [r.ts for r in recs]
        assert ts == sorted(ts)
        assert len(recs) == 3

    def test_drop_beyond_horizon(self, tmp_path, syn_frame, udp_frame):
        body = build_record(20, 0, syn_frame) \
            + build_record(10, 0, udp_frame)
        path = self.write(tmp_path, body)
        reader = pcap.open_capture(path)
        recs = list(reader)
        assert len(recs) == 1
        assert reader.summary.dropped_late == 1

    def test_non_ip_counted(self, tmp_path, syn_frame):
        arp = eth_header(0x0806) + b"\x00" * 28
        body = build_record(1, 0, arp) + build_record(2, 0, syn_frame)
        path = self.write(tmp_path, body)
        reader = pcap.open_capture(path)
        recs = list(reader)
        assert len(recs) == 1
        assert reader.summary.skipped_non_ip == 1
        assert reader.summary.frames_read == 2

    def test_fragment_bytes_counted(self, tmp_path):
        frag = eth_header() + ipv4_header(100, 17, frag_field=0x0005) \
            + b"\x00" * 80
        path = self.write(tmp_path, build_record(1, 0, frag))
        reader = pcap.open_capture(path)
        assert list(reader) == []
        assert reader.summary.fragment_frames == 1
        assert reader.summary.fragment_bytes == 80


class TestWriteReadRoundTrip:
    def test_single_record_file_length(self, tmp_path):
        rec = pcap.PacketRecord(
            ts=1.0, src_ip="192.0.2.1", dst_ip="192.0.2.2", src_port=1,
            dst_port=2, protocol=17, link_header_len=14, ip_header_len=20,
            l4_header_len=8, total_len=50, ttl=64, payload_len=8)
        path = tmp_path / "w.pcap"
        pcap.write_pcap([rec], str(path))
        assert path.stat().st_size == 24 + 16 + 50

    def test_empty_write(self, tmp_path):
        path = tmp_path / "e.pcap"
        pcap.write_pcap([], str(path))
        assert path.stat().st_size == 24
        assert list(pcap.open_capture(str(path))) == []

    def test_field_identical_round_trip(self, tmp_path):
        rng = np.random.default_rng(5)
        records = []
        t = 100.0
        for i in range(300):
            proto = int(rng.choice([6, 17, 1, 47]))
            payload = int(rng.integers(0, 1400))
            flags = int(rng.integers(0, 256)) if proto == 6 else None
            l4 = {6: 20, 17: 8, 1: 8}.get(proto, 0)
            has_ports = proto in (6, 17)
            records.append(pcap.PacketRecord(
                ts=pcap.quantize_us(t),
                src_ip="192.0.2.%d" % rng.integers(1, 250),
                dst_ip="198.51.100.%d" % rng.integers(1, 250),
                src_port=int(rng.integers(0, 65536)) if has_ports else 0,
                dst_port=int(rng.integers(0, 65536)) if has_ports else 0,
                protocol=proto, link_header_len=14, ip_header_len=20,
                l4_header_len=l4, total_len=14 + 20 + l4 + payload,
                ttl=int(rng.integers(1, 255)), payload_len=payload,
                tcp_flags=flags,
                tcp_window=int(rng.integers(0, 65536)) if proto == 6
                else None))
            t += float(rng.uniform(0, 0.05))
        path = tmp_path / "rt.pcap"
        pcap.write_pcap(records, str(path))
        back = list(pcap.open_capture(str(path)))
        assert back == records

    def test_ipv6_round_trip(self, tmp_path):
        rec = pcap.PacketRecord(
            ts=pcap.quantize_us(3.25), src_ip="2001:db8::1",
            dst_ip="2001:db8::2", src_port=1024, dst_port=443, protocol=6,
            link_header_len=14, ip_header_len=40, l4_header_len=20,
            total_len=14 + 40 + 20 + 100, ttl=61, payload_len=100,
            tcp_flags=pcap.TCP_ACK, tcp_window=1000)
        path = tmp_path / "v6.pcap"
        pcap.write_pcap([rec], str(path))
        assert list(pcap.open_capture(str(path))) == [rec]


def test_quantize_us_carry():
    assert pcap.quantize_us(1.9999996) == 2.0
    assert pcap.quantize_us(5.0) == 5.0


class TestReplay:
    def make_capture(self, tmp_path):
        recs = [pcap.PacketRecord(
            ts=float(t), src_ip="192.0.2.1", dst_ip="192.0.2.2",
            src_port=1, dst_port=2, protocol=17, link_header_len=14,
            ip_header_len=20, l4_header_len=8, total_len=60, ttl=64,
            payload_len=18) for t in (100.0, 100.5, 102.0)]
        path = str(tmp_path / "replay.pcap")
        pcap.write_pcap(recs, path)
        return path, recs

    def test_as_fast_as_possible(self, tmp_path):
        path, recs = self.make_capture(tmp_path)
        assert list(pcap.replay_capture(path, speed=None)) == recs

    def test_paced_by_capture_clock(self, tmp_path):
        path, recs = self.make_capture(tmp_path)
        naps = []
        out = list(pcap.replay_capture(path, speed=1000.0,
                                       sleep=naps.append))
        assert out == recs
        # pacing sleeps reflect the 0.5 s and 1.5 s capture gaps / speed
        assert len(naps) == 2
        assert naps[0] <= 0.5 / 1000.0 + 1e-3
        assert sum(naps) <= 2.0 / 1000.0 + 1e-2
