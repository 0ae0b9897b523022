//! Golden-file checks pinning the documented wire layout: exact bytes for
//! the stream preamble, section frames, header fields, and tag codes. These
//! bytes are the format contract; a change here is a format break.

use drc_core::bitstream::{
    q88_encode, q8_encode, write_stream, BitWriter, Section, SectionTag, StreamHeader,
};
use drc_core::explicit::{tag_encode, TagPrompt, TagVocabulary};

#[test]
fn header_bytes_are_pinned() {
    let header = StreamHeader {
        schedule_index: 0x0102,
        t: 8,
        t_e: 3,
        tau_q: q8_encode(1.0),
        flags: 1,
        seed: 0x1122_3344_5566_7788,
        tile: 16,
        overlap: 8,
        tag_cap: 4,
        sigma_q: q88_encode(0.5),
        kl_target_q: q88_encode(12.0),
        skip_threshold_q: q88_encode(0.25),
        vocab_hash: 0xAABB_CCDD_EEFF_0011,
        shape: (4, 6),
        skipped: vec![false, true, false, false, true, false, false, false],
    };
    let section = header.write().unwrap();
    let expected: Vec<u8> = vec![
        0x02, 0x01, // schedule index, LE
        0x08, 0x00, // T
        0x03, 0x00, // T_E
        0xFF, // tau = 1.0 in u8 fixed point
        0x01, // flags: hint conditioning
        0x88, 0x77, 0x66, 0x55, 0x44, 0x33, 0x22, 0x11, // seed LE
        0x10, 0x00, // tile
        0x08, 0x00, // overlap
        0x04, 0x00, // tag cap
        0x80, 0x00, // sigma 0.5 in 8.8
        0x00, 0x0C, // kl target 12.0 in 8.8
        0x40, 0x00, // skip threshold 0.25 in 8.8
        0x11, 0x00, 0xFF, 0xEE, 0xDD, 0xCC, 0xBB, 0xAA, // vocab hash LE
        0x04, 0x00, 0x06, 0x00, // shape
        0b0100_1000, // skip bitmap: bits 1 and 4 set, MSB-first
    ];
    assert_eq!(section.payload, expected);

    // Framed stream: magic, version, then tag + u32 bit length + payload.
    let stream = write_stream(&[section]);
    assert_eq!(&stream[0..4], b"DRC1");
    assert_eq!(stream[4], 1);
    assert_eq!(stream[5], SectionTag::Header as u8);
    assert_eq!(&stream[6..10], &((expected.len() as u32) * 8).to_le_bytes());
    assert_eq!(&stream[10..], &expected[..]);
}

#[test]
fn tag_section_bytes_are_pinned() {
    // N = 8 entries codes each tag in 3 bits; K = 2 prompt [1, 5]:
    // 0000_0010 then 001 101 padded -> 0x02, 0b0011_0100.
    let vocab = TagVocabulary::new((0..8).map(|i| format!("t{i}")).collect()).unwrap();
    let mut w = BitWriter::new();
    let bits = tag_encode(&TagPrompt::new(vec![1, 5]), &vocab, &mut w).unwrap();
    assert_eq!(bits, 8 + 2 * 3);
    let section = Section::from_writer(SectionTag::Tags, w).unwrap();
    assert_eq!(section.payload, vec![0x02, 0b0011_0100]);
    assert_eq!(section.bit_len, 14);
}

#[test]
fn empty_sections_and_order_are_stable() {
    let tags = Section::from_writer(SectionTag::Tags, BitWriter::new()).unwrap();
    let rcc = Section::from_writer(SectionTag::Rcc, BitWriter::new()).unwrap();
    let stream = write_stream(&[tags, rcc]);
    assert_eq!(
        stream,
        vec![
            b'D', b'R', b'C', b'1', 1, // preamble
            0x02, 0, 0, 0, 0, // empty tags section
            0x04, 0, 0, 0, 0, // empty rcc section
        ]
    );
}
