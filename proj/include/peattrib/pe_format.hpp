#pragma once

#include <array>
#include <cstdint>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

namespace peattrib {

inline constexpr uint16_t kDosMagic = 0x5A4D;           // "MZ"
inline constexpr uint32_t kPeSignature = 0x00004550;    // "PE\0\0"
inline constexpr uint16_t kMagicPe32 = 0x10B;
inline constexpr uint16_t kMagicPe32Plus = 0x20B;
inline constexpr uint16_t kMachineI386 = 0x14C;
inline constexpr uint16_t kMachineAmd64 = 0x8664;
inline constexpr uint32_t kSectionContainsCode = 0x00000020;
inline constexpr size_t kMaxSections = 96;
inline constexpr size_t kMaxDataDirectories = 16;
inline constexpr size_t kImportDirectoryIndex = 1;
inline constexpr size_t kDosHeaderSize = 64;
inline constexpr size_t kCoffHeaderSize = 20;
inline constexpr size_t kSectionHeaderSize = 40;
inline constexpr size_t kImportDescriptorSize = 20;

struct DosHeader {
  uint16_t magic = kDosMagic;
  uint32_t e_lfanew = kDosHeaderSize;
  bool operator==(const DosHeader&) const = default;
};

struct CoffFileHeader {
  uint16_t machine = kMachineI386;
  uint16_t number_of_sections = 0;
  uint32_t time_date_stamp = 0;
  uint32_t pointer_to_symbol_table = 0;
  uint32_t number_of_symbols = 0;
  uint16_t size_of_optional_header = 0;
  uint16_t characteristics = 0;
  bool operator==(const CoffFileHeader&) const = default;
};

struct DataDirectory {
  uint32_t virtual_address = 0;
  uint32_t size = 0;
  bool operator==(const DataDirectory&) const = default;
};

// PE32 and PE32+ are held in one struct; image_base is widened to 64 bits
// for both variants. Fields the toolkit does not consume (OS/subsystem
// versions, stack/heap sizes, checksum) are not modeled; the writer emits
// fixed values for them and the parser skips them.
struct OptionalHeader {
  uint16_t magic = kMagicPe32;
  uint8_t major_linker_version = 0;
  uint8_t minor_linker_version = 0;
  uint32_t size_of_code = 0;
  uint32_t size_of_initialized_data = 0;
  uint32_t size_of_uninitialized_data = 0;
  uint32_t address_of_entry_point = 0;
  uint32_t base_of_code = 0;
  uint64_t image_base = 0;
  uint32_t section_alignment = 0;
  uint32_t file_alignment = 0;
  uint32_t size_of_image = 0;
  uint32_t size_of_headers = 0;
  uint16_t dll_characteristics = 0;
  uint32_t number_of_rva_and_sizes = 0;
  std::vector<DataDirectory> data_directories;
  bool operator==(const OptionalHeader&) const = default;

  bool is_pe32_plus() const { return magic == kMagicPe32Plus; }
};

struct SectionHeader {
  std::array<uint8_t, 8> name{};
  uint32_t virtual_size = 0;
  uint32_t virtual_address = 0;
  uint32_t size_of_raw_data = 0;
  uint32_t pointer_to_raw_data = 0;
  uint32_t characteristics = 0;
  bool operator==(const SectionHeader&) const = default;

  std::string name_str() const;  // up to the first NUL
};

struct ImportEntry {
  std::string dll_name;
  uint32_t function_count = 0;  // imported symbols (by name or ordinal)
  bool operator==(const ImportEntry&) const = default;
};

struct PeFile {
  DosHeader dos;
  CoffFileHeader coff;
  OptionalHeader optional;
  std::vector<SectionHeader> sections;
  std::vector<ImportEntry> imports;
  uint64_t file_size = 0;
  bool operator==(const PeFile&) const = default;
};

enum class PeErrc {
  MalformedDos,
  MalformedSignature,
  TruncatedHeader,
  BadOptionalMagic,
  SectionOutOfBounds,
  ImportTableUnresolvable,
};

const char* to_string(PeErrc code);

class PeParseError : public std::runtime_error {
 public:
  PeParseError(PeErrc code, uint64_t offset, const std::string& detail);
  PeErrc code() const { return code_; }
  uint64_t offset() const { return offset_; }  // byte offset of first violation

 private:
  PeErrc code_;
  uint64_t offset_;
};

class InvalidSpecError : public std::runtime_error {
 public:
  explicit InvalidSpecError(const std::string& invariant);
  const std::string& invariant() const { return invariant_; }

 private:
  std::string invariant_;
};

// Writer input. `image` carries the authoritative header values; the writer
// emits them bit-exact and refuses inconsistent specs rather than repairing
// them. Use plan_pe() to build a consistent spec from intent-level knobs.
struct PeSpec {
  PeFile image;
  uint8_t header_fill = 0x00;
  std::vector<uint8_t> section_fill{'P', 'A', 'D', 'D', 'I', 'N', 'G', 'X'};
  uint32_t overlay_size = 0;
  uint8_t overlay_fill = 0x00;
  bool operator==(const PeSpec&) const = default;
};

// Intent-level description of a synthetic PE; plan_pe() turns it into a
// fully consistent PeSpec (layout, alignment, import directory placement).
struct SectionPlan {
  std::string name;
  uint32_t virtual_size = 0;
  uint32_t characteristics = 0;
  uint32_t raw_content_size = 0;  // pre-alignment body size
};

struct ImportPlan {
  std::string dll_name;
  uint32_t function_count = 0;
};

struct PeBuildPlan {
  bool pe32_plus = false;
  uint16_t machine = 0;  // 0 -> derived from pe32_plus
  uint32_t time_date_stamp = 0;
  uint16_t coff_characteristics = 0x0102;
  uint8_t major_linker_version = 14;
  uint8_t minor_linker_version = 0;
  uint32_t size_of_code = 0;
  uint32_t size_of_initialized_data = 0;
  uint32_t size_of_uninitialized_data = 0;
  uint32_t address_of_entry_point = 0x1000;
  uint32_t base_of_code = 0x1000;
  uint64_t image_base = 0;  // 0 -> derived from pe32_plus
  uint32_t section_alignment = 4096;
  uint32_t file_alignment = 512;
  uint16_t dll_characteristics = 0;
  uint32_t size_of_image = 0;    // 0 -> aligned end of virtual layout
  uint32_t size_of_headers = 0;  // 0 -> aligned end of headers
  uint32_t dos_stub_size = 0;    // filler between DOS header and signature
  std::vector<SectionPlan> sections;
  std::vector<ImportPlan> imports;  // hosted at the start of the last section
  uint32_t overlay_size = 0;
};

// Parses raw bytes into a structured view. Pure; never reads out of bounds;
// throws PeParseError on the first structural violation.
PeFile parse_pe(std::span<const uint8_t> bytes);

// Emits the spec bit-exact. Throws InvalidSpecError naming the violated
// invariant if the spec is inconsistent. parse_pe(write_pe(s)) == s.image.
std::vector<uint8_t> write_pe(const PeSpec& spec);

// Computes a consistent PeSpec from plan knobs (the layout engine used by
// the synthetic corpus and by test generators).
PeSpec plan_pe(const PeBuildPlan& plan);

// Sum of function_count over all import entries; 0 without an import table.
uint64_t count_dll_calls(const PeFile& pe);

struct Violation {
  std::string field;
  std::string constraint;
  bool operator==(const Violation&) const = default;
};

// Empty iff every type invariant holds. Violations are data, not errors.
std::vector<Violation> validate_pe(const PeFile& pe);

}  // namespace peattrib
