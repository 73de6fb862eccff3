// Copyright Contributors to the Wildsplat Project
// SPDX-License-Identifier: Apache-2.0
#include "wildsplat/checkpoint.hpp"

#include <cstring>
#include <fstream>
#include <stdexcept>
#include <unordered_map>

namespace wildsplat {

namespace {

constexpr char kMagic[4] = {'W', 'S', 'P', 'B'};
constexpr uint8_t kVersion = 1;

void put_u32(std::vector<uint8_t>& out, uint32_t v) {
    for (int i = 0; i < 4; ++i) out.push_back(static_cast<uint8_t>((v >> (8 * i)) & 0xff));
}

void put_f32(std::vector<uint8_t>& out, float f) {
    uint32_t v;
    std::memcpy(&v, &f, 4);
    put_u32(out, v);
}

struct Reader {
    const std::vector<uint8_t>& b;
    size_t pos = 0;

    void need(size_t n) const {
        if (pos + n > b.size()) throw std::runtime_error("block container: truncated file");
    }
    uint8_t u8() {
        need(1);
        return b[pos++];
    }
    uint32_t u32() {
        need(4);
        uint32_t v = 0;
        for (int i = 0; i < 4; ++i) v |= static_cast<uint32_t>(b[pos + i]) << (8 * i);
        pos += 4;
        return v;
    }
    float f32() {
        const uint32_t v = u32();
        float f;
        std::memcpy(&f, &v, 4);
        return f;
    }
    std::string str(size_t n) {
        need(n);
        std::string s(reinterpret_cast<const char*>(b.data() + pos), n);
        pos += n;
        return s;
    }
};

}  // namespace

std::vector<uint8_t> write_blocks(const std::vector<NamedBlock>& blocks) {
    std::vector<uint8_t> out;
    out.insert(out.end(), kMagic, kMagic + 4);
    out.push_back(kVersion);
    put_u32(out, static_cast<uint32_t>(blocks.size()));
    for (const NamedBlock& blk : blocks) {
        if (blk.name.size() > 0xffff)
            throw std::invalid_argument("block container: name too long: " + blk.name);
        out.push_back(static_cast<uint8_t>(blk.name.size() & 0xff));
        out.push_back(static_cast<uint8_t>(blk.name.size() >> 8));
        out.insert(out.end(), blk.name.begin(), blk.name.end());
        out.push_back(static_cast<uint8_t>(blk.tensor.ndim()));
        for (int d : blk.tensor.shape) put_u32(out, static_cast<uint32_t>(d));
        for (float v : blk.tensor.data) put_f32(out, v);
    }
    return out;
}

std::vector<NamedBlock> read_blocks(const std::vector<uint8_t>& bytes) {
    Reader r{bytes};
    if (r.str(4) != std::string(kMagic, 4))
        throw std::runtime_error("block container: bad magic");
    if (r.u8() != kVersion) throw std::runtime_error("block container: unsupported version");
    const uint32_t count = r.u32();
    std::vector<NamedBlock> blocks;
    blocks.reserve(count);
    for (uint32_t i = 0; i < count; ++i) {
        const size_t name_len = r.u8() | (static_cast<size_t>(r.u8()) << 8);
        NamedBlock blk;
        blk.name = r.str(name_len);
        const int ndim = r.u8();
        Shape shape(static_cast<size_t>(ndim));
        for (int d = 0; d < ndim; ++d) shape[static_cast<size_t>(d)] = static_cast<int>(r.u32());
        blk.tensor = Tensor(shape);
        for (float& v : blk.tensor.data) v = r.f32();
        blocks.push_back(std::move(blk));
    }
    return blocks;
}

void write_blocks_file(const std::vector<NamedBlock>& blocks, const std::string& path) {
    write_file_bytes(path, write_blocks(blocks));
}

std::vector<NamedBlock> read_blocks_file(const std::string& path) {
    return read_blocks(read_file_bytes(path));
}

std::vector<NamedBlock> params_to_blocks(const std::vector<Param*>& params) {
    std::vector<NamedBlock> blocks;
    for (const Param* p : params) {
        if (p->name.empty()) throw std::invalid_argument("params_to_blocks: unnamed parameter");
        blocks.push_back({p->name, p->value});
        blocks.push_back({p->name + ".m", p->m});
        blocks.push_back({p->name + ".v", p->v});
        blocks.push_back({p->name + ".t", Tensor::scalar(static_cast<float>(p->t))});
    }
    return blocks;
}

void params_from_blocks(const std::vector<NamedBlock>& blocks,
                        const std::vector<Param*>& params) {
    std::unordered_map<std::string, const NamedBlock*> by_name;
    for (const NamedBlock& blk : blocks) by_name[blk.name] = &blk;
    auto fetch = [&](const std::string& name) -> const NamedBlock& {
        auto it = by_name.find(name);
        if (it == by_name.end())
            throw std::runtime_error("checkpoint: missing block " + name);
        return *it->second;
    };
    for (Param* p : params) {
        const NamedBlock& val = fetch(p->name);
        if (val.tensor.shape != p->value.shape)
            throw std::runtime_error("checkpoint: shape mismatch for " + p->name + ": file " +
                                     shape_str(val.tensor.shape) + " vs model " +
                                     shape_str(p->value.shape));
        p->value = val.tensor;
        p->m = fetch(p->name + ".m").tensor;
        p->v = fetch(p->name + ".v").tensor;
        p->t = static_cast<int64_t>(fetch(p->name + ".t").tensor[0]);
        p->grad = Tensor(p->value.shape);
    }
}

const Tensor* AppearanceLibrary::find(int id) const {
    for (size_t i = 0; i < ids.size(); ++i)
        if (ids[i] == id) return &vectors[i];
    return nullptr;
}

void AppearanceLibrary::put(int id, Tensor v) {
    for (size_t i = 0; i < ids.size(); ++i)
        if (ids[i] == id) {
            vectors[i] = std::move(v);
            return;
        }
    ids.push_back(id);
    vectors.push_back(std::move(v));
}

void write_appearance_library(const AppearanceLibrary& lib, const std::string& path) {
    std::vector<uint8_t> out;
    put_u32(out, static_cast<uint32_t>(lib.ids.size()));
    const uint32_t dim = lib.vectors.empty() ? 0 : static_cast<uint32_t>(lib.vectors[0].numel());
    put_u32(out, dim);
    for (size_t i = 0; i < lib.ids.size(); ++i) {
        if (static_cast<uint32_t>(lib.vectors[i].numel()) != dim)
            throw std::invalid_argument("appearance library: inconsistent embedding lengths");
        put_u32(out, static_cast<uint32_t>(lib.ids[i]));
        for (float v : lib.vectors[i].data) put_f32(out, v);
    }
    write_file_bytes(path, out);
}

AppearanceLibrary read_appearance_library(const std::string& path) {
    const std::vector<uint8_t> bytes = read_file_bytes(path);
    Reader r{bytes};
    const uint32_t count = r.u32();
    const uint32_t dim = r.u32();
    AppearanceLibrary lib;
    for (uint32_t i = 0; i < count; ++i) {
        lib.ids.push_back(static_cast<int>(r.u32()));
        Tensor v({static_cast<int>(dim)});
        for (float& f : v.data) f = r.f32();
        lib.vectors.push_back(std::move(v));
    }
    return lib;
}

std::vector<uint8_t> read_file_bytes(const std::string& path) {
    std::ifstream f(path, std::ios::binary);
    if (!f) throw std::runtime_error("cannot open " + path);
    return std::vector<uint8_t>(std::istreambuf_iterator<char>(f),
                                std::istreambuf_iterator<char>());
}

void write_file_bytes(const std::string& path, const std::vector<uint8_t>& bytes) {
    std::ofstream f(path, std::ios::binary | std::ios::trunc);
    if (!f) throw std::runtime_error("cannot write " + path);
    f.write(reinterpret_cast<const char*>(bytes.data()),
            static_cast<std::streamsize>(bytes.size()));
    if (!f) throw std::runtime_error("short write to " + path);
}

void write_text_file(const std::string& path, const std::string& text) {
    std::ofstream f(path, std::ios::trunc);
    if (!f) throw std::runtime_error("cannot write " + path);
    f << text;
}

std::string read_text_file(const std::string& path) {
    std::ifstream f(path);
    if (!f) throw std::runtime_error("cannot open " + path);
    return std::string(std::istreambuf_iterator<char>(f), std::istreambuf_iterator<char>());
}

}  // namespace wildsplat
