#include "peattrib/pe_format.hpp"

#include <algorithm>
#include <cstring>
#include <limits>

namespace peattrib {

namespace {

uint64_t align_up(uint64_t value, uint64_t alignment) {
  if (alignment == 0) return value;
  return (value + alignment - 1) / alignment * alignment;
}

bool is_pow2(uint64_t v) { return v != 0 && (v & (v - 1)) == 0; }

// Bounds-checked little-endian reads. Every parser access goes through
// here, so a mutated input can only produce a typed error.
class Reader {
 public:
  explicit Reader(std::span<const uint8_t> bytes) : bytes_(bytes) {}

  uint64_t size() const { return bytes_.size(); }

  void require(uint64_t off, uint64_t len, PeErrc code,
               const char* what) const {
    if (off > bytes_.size() || len > bytes_.size() - off) {
      // offset of the first byte that could not be read
      const uint64_t fail = off > bytes_.size() ? off : bytes_.size();
      throw PeParseError(code, fail, what);
    }
  }

  uint8_t u8(uint64_t off) const { return bytes_[off]; }

  uint16_t u16(uint64_t off) const {
    return static_cast<uint16_t>(bytes_[off] | (bytes_[off + 1] << 8));
  }

  uint32_t u32(uint64_t off) const {
    return static_cast<uint32_t>(bytes_[off]) |
           (static_cast<uint32_t>(bytes_[off + 1]) << 8) |
           (static_cast<uint32_t>(bytes_[off + 2]) << 16) |
           (static_cast<uint32_t>(bytes_[off + 3]) << 24);
  }

  uint64_t u64(uint64_t off) const {
    return static_cast<uint64_t>(u32(off)) |
           (static_cast<uint64_t>(u32(off + 4)) << 32);
  }

 private:
  std::span<const uint8_t> bytes_;
};

class Writer {
 public:
  void u8(uint8_t v) { out_.push_back(v); }
  void u16(uint16_t v) {
    u8(static_cast<uint8_t>(v));
    u8(static_cast<uint8_t>(v >> 8));
  }
  void u32(uint32_t v) {
    u16(static_cast<uint16_t>(v));
    u16(static_cast<uint16_t>(v >> 16));
  }
  void u64(uint64_t v) {
    u32(static_cast<uint32_t>(v));
    u32(static_cast<uint32_t>(v >> 32));
  }
  void bytes(std::span<const uint8_t> b) {
    out_.insert(out_.end(), b.begin(), b.end());
  }
  void fill_to(uint64_t offset, uint8_t fill) {
    out_.resize(offset, fill);
  }
  uint64_t size() const { return out_.size(); }
  std::vector<uint8_t> take() { return std::move(out_); }

 private:
  std::vector<uint8_t> out_;
};

size_t optional_header_fixed_size(bool pe32_plus) {
  return pe32_plus ? 112 : 96;
}

// Import tables are laid out in one contiguous blob:
//   descriptor table | lookup tables | address tables | hint/name | dll names
struct ImportBlobLayout {
  struct PerDll {
    uint32_t lookup_off = 0;
    uint32_t address_off = 0;
    uint32_t name_off = 0;
    std::vector<uint32_t> hint_name_offs;
  };
  std::vector<PerDll> dlls;
  uint32_t directory_size = 0;  // descriptor table incl. terminator
  uint32_t total_size = 0;
};

ImportBlobLayout layout_import_blob(const std::vector<ImportEntry>& imports,
                                    bool pe32_plus) {
  const uint32_t thunk = pe32_plus ? 8 : 4;
  ImportBlobLayout layout;
  layout.dlls.resize(imports.size());
  layout.directory_size =
      static_cast<uint32_t>((imports.size() + 1) * kImportDescriptorSize);
  uint64_t cur = align_up(layout.directory_size, 8);
  for (size_t i = 0; i < imports.size(); ++i) {
    layout.dlls[i].lookup_off = static_cast<uint32_t>(cur);
    cur += static_cast<uint64_t>(imports[i].function_count + 1) * thunk;
  }
  for (size_t i = 0; i < imports.size(); ++i) {
    layout.dlls[i].address_off = static_cast<uint32_t>(cur);
    cur += static_cast<uint64_t>(imports[i].function_count + 1) * thunk;
  }
  for (size_t i = 0; i < imports.size(); ++i) {
    auto& offs = layout.dlls[i].hint_name_offs;
    offs.resize(imports[i].function_count);
    for (uint32_t j = 0; j < imports[i].function_count; ++j) {
      cur = align_up(cur, 2);
      offs[j] = static_cast<uint32_t>(cur);
      const std::string fn = "f" + std::to_string(j + 1);
      cur += 2 + fn.size() + 1;  // hint, name, NUL
    }
  }
  for (size_t i = 0; i < imports.size(); ++i) {
    cur = align_up(cur, 2);
    layout.dlls[i].name_off = static_cast<uint32_t>(cur);
    cur += imports[i].dll_name.size() + 1;
  }
  layout.total_size = static_cast<uint32_t>(cur);
  return layout;
}

std::vector<uint8_t> render_import_blob(const std::vector<ImportEntry>& imports,
                                        bool pe32_plus, uint32_t blob_rva) {
  const ImportBlobLayout layout = layout_import_blob(imports, pe32_plus);
  std::vector<uint8_t> blob(layout.total_size, 0);
  auto put32 = [&](uint32_t off, uint32_t v) {
    blob[off] = static_cast<uint8_t>(v);
    blob[off + 1] = static_cast<uint8_t>(v >> 8);
    blob[off + 2] = static_cast<uint8_t>(v >> 16);
    blob[off + 3] = static_cast<uint8_t>(v >> 24);
  };
  for (size_t i = 0; i < imports.size(); ++i) {
    const uint32_t desc = static_cast<uint32_t>(i * kImportDescriptorSize);
    put32(desc + 0, blob_rva + layout.dlls[i].lookup_off);
    put32(desc + 12, blob_rva + layout.dlls[i].name_off);
    put32(desc + 16, blob_rva + layout.dlls[i].address_off);
    const uint32_t thunk = pe32_plus ? 8 : 4;
    for (uint32_t j = 0; j < imports[i].function_count; ++j) {
      const uint32_t target = blob_rva + layout.dlls[i].hint_name_offs[j];
      put32(layout.dlls[i].lookup_off + j * thunk, target);
      put32(layout.dlls[i].address_off + j * thunk, target);
      // high halves of PE32+ thunks stay zero (by-name import)
      const uint32_t hn = layout.dlls[i].hint_name_offs[j];
      blob[hn] = static_cast<uint8_t>(j);
      blob[hn + 1] = static_cast<uint8_t>(j >> 8);
      const std::string fn = "f" + std::to_string(j + 1);
      std::memcpy(blob.data() + hn + 2, fn.data(), fn.size());
    }
    std::memcpy(blob.data() + layout.dlls[i].name_off,
                imports[i].dll_name.data(), imports[i].dll_name.size());
  }
  return blob;
}

// RVA -> file offset through the section table (or the header region).
// Returns false if the range cannot be satisfied from raw file data.
bool resolve_rva(const PeFile& pe, uint64_t rva, uint64_t len,
                 uint64_t file_len, uint64_t* out_off) {
  if (rva < pe.optional.size_of_headers) {
    if (rva + len <= std::min<uint64_t>(pe.optional.size_of_headers, file_len)) {
      *out_off = rva;
      return true;
    }
    return false;
  }
  for (const auto& s : pe.sections) {
    const uint64_t span = std::max<uint64_t>(s.virtual_size, s.size_of_raw_data);
    if (rva >= s.virtual_address && rva < s.virtual_address + span) {
      const uint64_t delta = rva - s.virtual_address;
      if (delta + len <= s.size_of_raw_data &&
          s.pointer_to_raw_data + delta + len <= file_len) {
        *out_off = s.pointer_to_raw_data + delta;
        return true;
      }
      return false;
    }
  }
  return false;
}

void parse_imports(const Reader& r, PeFile& pe, uint64_t dir_entry_off) {
  const auto& dirs = pe.optional.data_directories;
  if (dirs.size() <= kImportDirectoryIndex) return;
  const DataDirectory dir = dirs[kImportDirectoryIndex];
  if (dir.size == 0 || dir.virtual_address == 0) return;

  const uint64_t thunk = pe.optional.is_pe32_plus() ? 8 : 4;
  auto resolve = [&](uint64_t rva, uint64_t len) -> uint64_t {
    uint64_t off = 0;
    if (!resolve_rva(pe, rva, len, r.size(), &off)) {
      throw PeParseError(PeErrc::ImportTableUnresolvable, dir_entry_off,
                         "import RVA does not map to raw file data");
    }
    return off;
  };

  constexpr uint32_t kMaxDescriptors = 4096;
  constexpr uint32_t kMaxThunks = 65536;
  constexpr uint32_t kMaxNameLen = 512;

  for (uint32_t k = 0;; ++k) {
    if (k >= kMaxDescriptors) {
      throw PeParseError(PeErrc::ImportTableUnresolvable, dir_entry_off,
                         "import descriptor table not terminated");
    }
    const uint64_t ent =
        resolve(dir.virtual_address + uint64_t{k} * kImportDescriptorSize,
                kImportDescriptorSize);
    const uint32_t lookup_rva = r.u32(ent);
    const uint32_t name_rva = r.u32(ent + 12);
    const uint32_t address_rva = r.u32(ent + 16);
    if (lookup_rva == 0 && name_rva == 0 && address_rva == 0 &&
        r.u32(ent + 4) == 0 && r.u32(ent + 8) == 0) {
      break;
    }

    ImportEntry entry;
    if (name_rva != 0) {
      for (uint32_t i = 0;; ++i) {
        if (i >= kMaxNameLen) {
          throw PeParseError(PeErrc::ImportTableUnresolvable, dir_entry_off,
                             "dll name not NUL-terminated");
        }
        const uint8_t c = r.u8(resolve(name_rva + uint64_t{i}, 1));
        if (c == 0) break;
        entry.dll_name.push_back(static_cast<char>(c));
      }
    }

    const uint32_t thunks_rva = lookup_rva != 0 ? lookup_rva : address_rva;
    if (thunks_rva != 0) {
      for (uint32_t t = 0;; ++t) {
        if (t >= kMaxThunks) {
          throw PeParseError(PeErrc::ImportTableUnresolvable, dir_entry_off,
                             "import thunk array not terminated");
        }
        const uint64_t off = resolve(thunks_rva + uint64_t{t} * thunk, thunk);
        const uint64_t value = thunk == 8 ? r.u64(off) : r.u32(off);
        if (value == 0) break;
        ++entry.function_count;  // by-name and by-ordinal both count as one
      }
    }
    pe.imports.push_back(std::move(entry));
  }
}

void check(bool ok, const std::string& field, const std::string& constraint,
           std::vector<Violation>* out) {
  if (!ok) out->push_back({field, constraint});
}

void require_spec(bool ok, const std::string& invariant) {
  if (!ok) throw InvalidSpecError(invariant);
}

}  // namespace

std::string SectionHeader::name_str() const {
  std::string s;
  for (uint8_t c : name) {
    if (c == 0) break;
    s.push_back(static_cast<char>(c));
  }
  return s;
}

const char* to_string(PeErrc code) {
  switch (code) {
    case PeErrc::MalformedDos: return "MalformedDos";
    case PeErrc::MalformedSignature: return "MalformedSignature";
    case PeErrc::TruncatedHeader: return "TruncatedHeader";
    case PeErrc::BadOptionalMagic: return "BadOptionalMagic";
    case PeErrc::SectionOutOfBounds: return "SectionOutOfBounds";
    case PeErrc::ImportTableUnresolvable: return "ImportTableUnresolvable";
  }
  return "UnknownPeError";
}

PeParseError::PeParseError(PeErrc code, uint64_t offset,
                           const std::string& detail)
    : std::runtime_error(std::string(to_string(code)) + " at offset " +
                         std::to_string(offset) + ": " + detail),
      code_(code),
      offset_(offset) {}

InvalidSpecError::InvalidSpecError(const std::string& invariant)
    : std::runtime_error("InvalidSpec: " + invariant), invariant_(invariant) {}

PeFile parse_pe(std::span<const uint8_t> bytes) {
  Reader r(bytes);
  PeFile pe;
  pe.file_size = bytes.size();

  r.require(0, kDosHeaderSize, PeErrc::TruncatedHeader, "DOS header");
  pe.dos.magic = r.u16(0);
  if (pe.dos.magic != kDosMagic) {
    throw PeParseError(PeErrc::MalformedDos, 0, "missing MZ magic");
  }
  pe.dos.e_lfanew = r.u32(0x3C);
  if (pe.dos.e_lfanew < 0x40 ||
      uint64_t{pe.dos.e_lfanew} >= bytes.size() - 4) {
    throw PeParseError(PeErrc::MalformedDos, 0x3C, "e_lfanew out of range");
  }

  const uint64_t sig_off = pe.dos.e_lfanew;
  if (r.u32(sig_off) != kPeSignature) {
    throw PeParseError(PeErrc::MalformedSignature, sig_off,
                       "missing PE\\0\\0 signature");
  }

  const uint64_t coff_off = sig_off + 4;
  r.require(coff_off, kCoffHeaderSize, PeErrc::TruncatedHeader, "COFF header");
  pe.coff.machine = r.u16(coff_off);
  pe.coff.number_of_sections = r.u16(coff_off + 2);
  pe.coff.time_date_stamp = r.u32(coff_off + 4);
  pe.coff.pointer_to_symbol_table = r.u32(coff_off + 8);
  pe.coff.number_of_symbols = r.u32(coff_off + 12);
  pe.coff.size_of_optional_header = r.u16(coff_off + 16);
  pe.coff.characteristics = r.u16(coff_off + 18);

  const uint64_t opt_off = coff_off + kCoffHeaderSize;
  const uint64_t opt_size = pe.coff.size_of_optional_header;
  r.require(opt_off, opt_size, PeErrc::TruncatedHeader, "optional header");
  if (opt_size < 2) {
    throw PeParseError(PeErrc::TruncatedHeader, opt_off + opt_size,
                       "optional header too small for magic");
  }
  auto& opt = pe.optional;
  opt.magic = r.u16(opt_off);
  if (opt.magic != kMagicPe32 && opt.magic != kMagicPe32Plus) {
    throw PeParseError(PeErrc::BadOptionalMagic, opt_off,
                       "optional header magic not PE32/PE32+");
  }
  const bool plus = opt.is_pe32_plus();
  const uint64_t fixed = optional_header_fixed_size(plus);
  if (opt_size < fixed) {
    throw PeParseError(PeErrc::TruncatedHeader, opt_off + opt_size,
                       "optional header smaller than fixed layout");
  }
  opt.major_linker_version = r.u8(opt_off + 2);
  opt.minor_linker_version = r.u8(opt_off + 3);
  opt.size_of_code = r.u32(opt_off + 4);
  opt.size_of_initialized_data = r.u32(opt_off + 8);
  opt.size_of_uninitialized_data = r.u32(opt_off + 12);
  opt.address_of_entry_point = r.u32(opt_off + 16);
  opt.base_of_code = r.u32(opt_off + 20);
  opt.image_base = plus ? r.u64(opt_off + 24) : uint64_t{r.u32(opt_off + 28)};
  opt.section_alignment = r.u32(opt_off + 32);
  opt.file_alignment = r.u32(opt_off + 36);
  opt.size_of_image = r.u32(opt_off + 56);
  opt.size_of_headers = r.u32(opt_off + 60);
  opt.dll_characteristics = r.u16(opt_off + 70);
  opt.number_of_rva_and_sizes = r.u32(opt_off + (plus ? 108 : 92));

  const uint64_t dirs_off = opt_off + fixed;
  const uint64_t dirs_bytes = uint64_t{opt.number_of_rva_and_sizes} * 8;
  if (fixed + dirs_bytes > opt_size) {
    throw PeParseError(PeErrc::TruncatedHeader, opt_off + opt_size,
                       "data directories exceed optional header size");
  }
  opt.data_directories.resize(opt.number_of_rva_and_sizes);
  for (uint32_t i = 0; i < opt.number_of_rva_and_sizes; ++i) {
    opt.data_directories[i].virtual_address = r.u32(dirs_off + i * 8);
    opt.data_directories[i].size = r.u32(dirs_off + i * 8 + 4);
  }

  const uint64_t sec_off = opt_off + opt_size;
  r.require(sec_off, uint64_t{pe.coff.number_of_sections} * kSectionHeaderSize,
            PeErrc::TruncatedHeader, "section table");
  pe.sections.resize(pe.coff.number_of_sections);
  for (uint32_t i = 0; i < pe.coff.number_of_sections; ++i) {
    const uint64_t s = sec_off + uint64_t{i} * kSectionHeaderSize;
    auto& sec = pe.sections[i];
    for (size_t b = 0; b < 8; ++b) sec.name[b] = r.u8(s + b);
    sec.virtual_size = r.u32(s + 8);
    sec.virtual_address = r.u32(s + 12);
    sec.size_of_raw_data = r.u32(s + 16);
    sec.pointer_to_raw_data = r.u32(s + 20);
    sec.characteristics = r.u32(s + 36);
    if (sec.size_of_raw_data > 0 &&
        uint64_t{sec.pointer_to_raw_data} + sec.size_of_raw_data >
            bytes.size()) {
      throw PeParseError(PeErrc::SectionOutOfBounds, s,
                         "section raw data extends past end of file");
    }
  }

  const uint64_t dir1_entry_off = dirs_off + kImportDirectoryIndex * 8;
  parse_imports(r, pe, dir1_entry_off);
  return pe;
}

std::vector<Violation> validate_pe(const PeFile& pe) {
  std::vector<Violation> v;
  check(pe.dos.magic == kDosMagic, "dos.magic", "must equal 0x5A4D", &v);
  check(pe.dos.e_lfanew >= 0x40 &&
            pe.file_size > 4 && uint64_t{pe.dos.e_lfanew} < pe.file_size - 4,
        "dos.e_lfanew", "must be >= 0x40 and < file_size - 4", &v);
  check(pe.coff.number_of_sections >= 1 &&
            pe.coff.number_of_sections <= kMaxSections,
        "coff.number_of_sections", "must be in [1, 96]", &v);
  const auto& opt = pe.optional;
  const bool magic_ok = opt.magic == kMagicPe32 || opt.magic == kMagicPe32Plus;
  check(magic_ok, "optional.magic", "must be 0x10B (PE32) or 0x20B (PE32+)",
        &v);
  if (magic_ok) {
    check(pe.coff.size_of_optional_header >=
              optional_header_fixed_size(opt.is_pe32_plus()),
          "coff.size_of_optional_header",
          "must cover the fixed optional header layout", &v);
  }
  const bool falign_ok =
      is_pow2(opt.file_alignment) && opt.file_alignment >= 512 &&
      opt.file_alignment <= 65536;
  check(falign_ok, "optional.file_alignment",
        "must be a power of two in [512, 65536]", &v);
  check(opt.section_alignment >= opt.file_alignment,
        "optional.section_alignment", "must be >= file_alignment", &v);
  if (falign_ok) {
    check(opt.size_of_headers % opt.file_alignment == 0,
          "optional.size_of_headers", "must be a multiple of file_alignment",
          &v);
  }
  check(opt.number_of_rva_and_sizes <= kMaxDataDirectories &&
            opt.data_directories.size() == opt.number_of_rva_and_sizes,
        "optional.data_directories",
        "length must equal number_of_rva_and_sizes (<= 16)", &v);
  check(pe.sections.size() == pe.coff.number_of_sections, "sections",
        "length must equal coff.number_of_sections", &v);
  for (size_t i = 0; i < pe.sections.size(); ++i) {
    const auto& s = pe.sections[i];
    const std::string tag = "sections[" + std::to_string(i) + "]";
    if (falign_ok && s.size_of_raw_data > 0) {
      check(s.size_of_raw_data % opt.file_alignment == 0,
            tag + ".size_of_raw_data",
            "must be a multiple of file_alignment when nonzero", &v);
    }
    check(uint64_t{s.pointer_to_raw_data} + s.size_of_raw_data <= pe.file_size,
          tag + ".pointer_to_raw_data",
          "raw data must end within the file", &v);
  }
  const uint32_t dir1_size =
      opt.data_directories.size() > kImportDirectoryIndex
          ? opt.data_directories[kImportDirectoryIndex].size
          : 0;
  check(pe.imports.empty() == (dir1_size == 0), "imports",
        "must be empty iff import data directory size is 0", &v);
  for (size_t i = 0; i < pe.imports.size(); ++i) {
    const std::string tag = "imports[" + std::to_string(i) + "]";
    check(pe.imports[i].function_count >= 1, tag + ".function_count",
          "must be >= 1", &v);
    check(!pe.imports[i].dll_name.empty(), tag + ".dll_name",
          "must be non-empty", &v);
  }
  return v;
}

uint64_t count_dll_calls(const PeFile& pe) {
  uint64_t total = 0;
  for (const auto& entry : pe.imports) total += entry.function_count;
  return total;
}

std::vector<uint8_t> write_pe(const PeSpec& spec) {
  const PeFile& pe = spec.image;
  {
    const auto violations = validate_pe(pe);
    if (!violations.empty()) {
      throw InvalidSpecError(violations.front().field + ": " +
                             violations.front().constraint);
    }
  }
  require_spec(!spec.section_fill.empty(), "section_fill: must be non-empty");

  const auto& opt = pe.optional;
  const bool plus = opt.is_pe32_plus();
  require_spec(plus || opt.image_base <= 0xFFFFFFFFULL,
               "optional.image_base: must fit 32 bits for PE32");
  const uint64_t opt_size =
      optional_header_fixed_size(plus) + opt.data_directories.size() * 8;
  require_spec(pe.coff.size_of_optional_header == opt_size,
               "coff.size_of_optional_header: must equal emitted optional "
               "header size");

  const uint64_t header_end = uint64_t{pe.dos.e_lfanew} + 4 + kCoffHeaderSize +
                              opt_size +
                              pe.sections.size() * kSectionHeaderSize;
  require_spec(header_end <= opt.size_of_headers,
               "optional.size_of_headers: must cover all headers");

  // Sections: in-spec order, alignment-valid, raw data packed sequentially
  // right after the headers.
  uint64_t raw_cursor = opt.size_of_headers;
  uint64_t prev_virtual_end = 0;
  for (size_t i = 0; i < pe.sections.size(); ++i) {
    const auto& s = pe.sections[i];
    const std::string tag = "sections[" + std::to_string(i) + "]";
    require_spec(s.virtual_address % opt.section_alignment == 0,
                 tag + ".virtual_address: must be section_alignment-aligned");
    require_spec(s.virtual_address >= prev_virtual_end && s.virtual_address > 0,
                 tag + ".virtual_address: must ascend without overlap");
    prev_virtual_end =
        s.virtual_address +
        align_up(std::max<uint64_t>(s.virtual_size, 1), opt.section_alignment);
    if (s.size_of_raw_data == 0) {
      require_spec(s.pointer_to_raw_data == 0,
                   tag + ".pointer_to_raw_data: must be 0 when raw size is 0");
    } else {
      require_spec(s.pointer_to_raw_data == raw_cursor,
                   tag + ".pointer_to_raw_data: must follow previous section");
      raw_cursor += s.size_of_raw_data;
    }
  }
  require_spec(pe.file_size == raw_cursor + spec.overlay_size,
               "file_size: must equal headers + raw sections + overlay");

  // Import directory placement.
  std::vector<uint8_t> blob;
  uint64_t blob_file_off = 0;
  const DataDirectory dir1 =
      opt.data_directories.size() > kImportDirectoryIndex
          ? opt.data_directories[kImportDirectoryIndex]
          : DataDirectory{};
  if (!pe.imports.empty()) {
    const ImportBlobLayout layout = layout_import_blob(pe.imports, plus);
    require_spec(dir1.size == layout.directory_size,
                 "data_directories[1].size: must equal import descriptor "
                 "table size");
    const SectionHeader* host = nullptr;
    for (const auto& s : pe.sections) {
      if (dir1.virtual_address >= s.virtual_address &&
          dir1.virtual_address <
              s.virtual_address +
                  std::max<uint64_t>(s.virtual_size, s.size_of_raw_data)) {
        host = &s;
        break;
      }
    }
    require_spec(host != nullptr,
                 "data_directories[1].virtual_address: must fall inside a "
                 "section");
    const uint64_t delta = dir1.virtual_address - host->virtual_address;
    require_spec(delta + layout.total_size <= host->size_of_raw_data,
                 "data_directories[1]: import tables must fit in the hosting "
                 "section raw data");
    blob = render_import_blob(pe.imports, plus, dir1.virtual_address);
    blob_file_off = host->pointer_to_raw_data + delta;
  } else {
    require_spec(dir1.virtual_address == 0 && dir1.size == 0,
                 "data_directories[1]: must be zero without imports");
  }

  Writer w;
  // DOS header: only magic and e_lfanew carry meaning; the rest is fill.
  w.u16(pe.dos.magic);
  w.fill_to(0x3C, spec.header_fill);
  w.u32(pe.dos.e_lfanew);
  w.fill_to(pe.dos.e_lfanew, spec.header_fill);

  w.u32(kPeSignature);
  w.u16(pe.coff.machine);
  w.u16(pe.coff.number_of_sections);
  w.u32(pe.coff.time_date_stamp);
  w.u32(pe.coff.pointer_to_symbol_table);
  w.u32(pe.coff.number_of_symbols);
  w.u16(pe.coff.size_of_optional_header);
  w.u16(pe.coff.characteristics);

  w.u16(opt.magic);
  w.u8(opt.major_linker_version);
  w.u8(opt.minor_linker_version);
  w.u32(opt.size_of_code);
  w.u32(opt.size_of_initialized_data);
  w.u32(opt.size_of_uninitialized_data);
  w.u32(opt.address_of_entry_point);
  w.u32(opt.base_of_code);
  if (plus) {
    w.u64(opt.image_base);
  } else {
    w.u32(0);  // BaseOfData
    w.u32(static_cast<uint32_t>(opt.image_base));
  }
  w.u32(opt.section_alignment);
  w.u32(opt.file_alignment);
  w.u16(6);  // MajorOperatingSystemVersion
  w.u16(0);  // MinorOperatingSystemVersion
  w.u16(0);  // MajorImageVersion
  w.u16(0);  // MinorImageVersion
  w.u16(6);  // MajorSubsystemVersion
  w.u16(0);  // MinorSubsystemVersion
  w.u32(0);  // Win32VersionValue
  w.u32(opt.size_of_image);
  w.u32(opt.size_of_headers);
  w.u32(0);  // CheckSum
  w.u16(2);  // Subsystem: WINDOWS_GUI
  w.u16(opt.dll_characteristics);
  if (plus) {
    w.u64(0x100000);  // SizeOfStackReserve
    w.u64(0x1000);    // SizeOfStackCommit
    w.u64(0x100000);  // SizeOfHeapReserve
    w.u64(0x1000);    // SizeOfHeapCommit
  } else {
    w.u32(0x100000);
    w.u32(0x1000);
    w.u32(0x100000);
    w.u32(0x1000);
  }
  w.u32(0);  // LoaderFlags
  w.u32(opt.number_of_rva_and_sizes);
  for (const auto& d : opt.data_directories) {
    w.u32(d.virtual_address);
    w.u32(d.size);
  }

  for (const auto& s : pe.sections) {
    w.bytes(std::span<const uint8_t>(s.name.data(), s.name.size()));
    w.u32(s.virtual_size);
    w.u32(s.virtual_address);
    w.u32(s.size_of_raw_data);
    w.u32(s.pointer_to_raw_data);
    w.u32(0);  // PointerToRelocations
    w.u32(0);  // PointerToLinenumbers
    w.u16(0);  // NumberOfRelocations
    w.u16(0);  // NumberOfLinenumbers
    w.u32(s.characteristics);
  }
  w.fill_to(opt.size_of_headers, spec.header_fill);

  for (const auto& s : pe.sections) {
    if (s.size_of_raw_data == 0) continue;
    const uint64_t start = w.size();
    for (uint32_t i = 0; i < s.size_of_raw_data; ++i) {
      w.u8(spec.section_fill[i % spec.section_fill.size()]);
    }
    if (!blob.empty() && blob_file_off >= start &&
        blob_file_off + blob.size() <= start + s.size_of_raw_data) {
      // overwrite the fill with the import tables at their planned spot
      std::vector<uint8_t> body = w.take();
      std::copy(blob.begin(), blob.end(), body.begin() + blob_file_off);
      w = Writer();
      w.bytes(body);
    }
  }
  for (uint32_t i = 0; i < spec.overlay_size; ++i) w.u8(spec.overlay_fill);

  std::vector<uint8_t> out = w.take();
  require_spec(out.size() == pe.file_size,
               "file_size: emitted byte count must match");
  return out;
}

PeSpec plan_pe(const PeBuildPlan& plan) {
  require_spec(!plan.sections.empty(), "sections: at least one required");
  require_spec(plan.sections.size() <= kMaxSections,
               "sections: at most 96 allowed");
  require_spec(is_pow2(plan.file_alignment) && plan.file_alignment >= 512 &&
                   plan.file_alignment <= 65536,
               "file_alignment: must be a power of two in [512, 65536]");
  require_spec(plan.section_alignment >= plan.file_alignment,
               "section_alignment: must be >= file_alignment");

  PeSpec spec;
  PeFile& pe = spec.image;
  const bool plus = plan.pe32_plus;

  pe.dos.magic = kDosMagic;
  pe.dos.e_lfanew = static_cast<uint32_t>(kDosHeaderSize + plan.dos_stub_size);

  pe.coff.machine = plan.machine != 0
                        ? plan.machine
                        : (plus ? kMachineAmd64 : kMachineI386);
  pe.coff.number_of_sections = static_cast<uint16_t>(plan.sections.size());
  pe.coff.time_date_stamp = plan.time_date_stamp;
  pe.coff.size_of_optional_header = static_cast<uint16_t>(
      optional_header_fixed_size(plus) + kMaxDataDirectories * 8);
  pe.coff.characteristics = plan.coff_characteristics;

  auto& opt = pe.optional;
  opt.magic = plus ? kMagicPe32Plus : kMagicPe32;
  opt.major_linker_version = plan.major_linker_version;
  opt.minor_linker_version = plan.minor_linker_version;
  opt.size_of_code = plan.size_of_code;
  opt.size_of_initialized_data = plan.size_of_initialized_data;
  opt.size_of_uninitialized_data = plan.size_of_uninitialized_data;
  opt.address_of_entry_point = plan.address_of_entry_point;
  opt.base_of_code = plan.base_of_code;
  opt.image_base = plan.image_base != 0
                       ? plan.image_base
                       : (plus ? 0x140000000ULL : 0x400000ULL);
  opt.section_alignment = plan.section_alignment;
  opt.file_alignment = plan.file_alignment;
  opt.dll_characteristics = plan.dll_characteristics;
  opt.number_of_rva_and_sizes = kMaxDataDirectories;
  opt.data_directories.assign(kMaxDataDirectories, DataDirectory{});

  const uint64_t header_end = uint64_t{pe.dos.e_lfanew} + 4 + kCoffHeaderSize +
                              pe.coff.size_of_optional_header +
                              plan.sections.size() * kSectionHeaderSize;
  const uint64_t headers_aligned = align_up(header_end, plan.file_alignment);
  if (plan.size_of_headers != 0) {
    require_spec(plan.size_of_headers >= header_end &&
                     plan.size_of_headers % plan.file_alignment == 0,
                 "size_of_headers: must cover headers and respect alignment");
    opt.size_of_headers = plan.size_of_headers;
  } else {
    opt.size_of_headers = static_cast<uint32_t>(headers_aligned);
  }

  uint32_t blob_size = 0;
  if (!plan.imports.empty()) {
    std::vector<ImportEntry> entries;
    entries.reserve(plan.imports.size());
    for (const auto& imp : plan.imports) {
      require_spec(!imp.dll_name.empty(), "imports: dll_name must be non-empty");
      require_spec(imp.function_count >= 1,
                   "imports: function_count must be >= 1");
      entries.push_back({imp.dll_name, imp.function_count});
    }
    pe.imports = std::move(entries);
    blob_size = layout_import_blob(pe.imports, plus).total_size;
  }

  uint64_t va_cursor = plan.section_alignment;
  uint64_t raw_cursor = opt.size_of_headers;
  pe.sections.resize(plan.sections.size());
  for (size_t i = 0; i < plan.sections.size(); ++i) {
    const auto& sp = plan.sections[i];
    auto& s = pe.sections[i];
    require_spec(sp.name.size() <= 8, "sections: name must be at most 8 bytes");
    s.name.fill(0);
    std::copy(sp.name.begin(), sp.name.end(), s.name.begin());
    s.virtual_size = sp.virtual_size;
    s.virtual_address = static_cast<uint32_t>(va_cursor);
    s.characteristics = sp.characteristics;
    uint64_t content = sp.raw_content_size;
    if (i + 1 == plan.sections.size() && blob_size > 0) {
      content = std::max<uint64_t>(content, blob_size);
    }
    const uint64_t raw = align_up(content, plan.file_alignment);
    s.size_of_raw_data = static_cast<uint32_t>(raw);
    s.pointer_to_raw_data = raw > 0 ? static_cast<uint32_t>(raw_cursor) : 0;
    raw_cursor += raw;
    va_cursor += align_up(std::max<uint64_t>(s.virtual_size, 1),
                          plan.section_alignment);
  }

  if (blob_size > 0) {
    auto& dir1 = opt.data_directories[kImportDirectoryIndex];
    dir1.virtual_address = pe.sections.back().virtual_address;
    dir1.size = layout_import_blob(pe.imports, plus).directory_size;
  }

  opt.size_of_image = plan.size_of_image != 0
                          ? plan.size_of_image
                          : static_cast<uint32_t>(va_cursor);
  spec.overlay_size = plan.overlay_size;
  pe.file_size = raw_cursor + plan.overlay_size;
  return spec;
}

}  // namespace peattrib
