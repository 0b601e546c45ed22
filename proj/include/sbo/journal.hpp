#pragma once

#include "sbo/errors.hpp"

#include <nlohmann/json.hpp>

#include <fcntl.h>
#include <unistd.h>

#include <cerrno>
#include <cstdint>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

namespace sbo {

// Append-only mutation log with snapshot compaction.
//
// Files: `<path>` holds one JSON record per line, each carrying a "seq"
// number; `<path>.snapshot` holds the full state as of "last_seq". On load,
// records with seq <= last_seq are skipped, so a crash between writing the
// snapshot and truncating the log is harmless. A torn final line (crash
// mid-append) is dropped and cut from the file.
class Journal {
public:
    using json = nlohmann::ordered_json;

    struct Loaded {
        std::optional<json> snapshot;
        std::vector<json> records;  // strictly after the snapshot, in order
        std::uint64_t last_seq = 0;
    };

    Journal(std::filesystem::path path, bool sync) : path_(std::move(path)), sync_(sync) {}

    Journal(const Journal&) = delete;
    Journal& operator=(const Journal&) = delete;
    ~Journal() { close_log(); }

    Loaded load() {
        Loaded out;
        const auto snap_path = snapshot_path();
        if (std::filesystem::exists(snap_path)) {
            std::ifstream in(snap_path, std::ios::binary);
            std::stringstream buf;
            buf << in.rdbuf();
            try {
                out.snapshot = json::parse(buf.str());
            } catch (const json::exception& e) {
                throw Error("CorruptSnapshot", std::string("cannot read snapshot: ") + e.what());
            }
            out.last_seq = out.snapshot->at("last_seq").get<std::uint64_t>();
        }

        std::uintmax_t good_bytes = 0;
        if (std::filesystem::exists(path_)) {
            std::ifstream in(path_, std::ios::binary);
            std::string line;
            std::uintmax_t offset = 0;
            while (std::getline(in, line)) {
                const bool complete = !in.eof();
                const std::uintmax_t next = offset + line.size() + (complete ? 1 : 0);
                if (!complete) break;  // no trailing newline: torn write
                json record;
                try {
                    record = json::parse(line);
                } catch (const json::exception&) {
                    break;
                }
                const auto seq = record.at("seq").get<std::uint64_t>();
                if (seq > out.last_seq) {
                    out.records.push_back(std::move(record));
                    out.last_seq = seq;
                }
                offset = next;
                good_bytes = offset;
            }
            if (good_bytes != std::filesystem::file_size(path_)) std::filesystem::resize_file(path_, good_bytes);
        }
        next_seq_ = out.last_seq + 1;
        records_since_snapshot_ = out.records.size();
        return out;
    }

    // Stamps `record` with the next sequence number and makes it durable.
    std::uint64_t append(json record) {
        open_log();
        const auto seq = next_seq_++;
        record["seq"] = seq;
        const std::string line = record.dump() + "\n";
        write_all(line);
        if (sync_) ::fsync(fd_);
        ++records_since_snapshot_;
        return seq;
    }

    std::size_t records_since_snapshot() const { return records_since_snapshot_; }
    std::uint64_t last_seq() const { return next_seq_ - 1; }

    // Atomically replaces the snapshot (which must carry "last_seq") and
    // empties the log.
    void compact(const json& snapshot) {
        const auto tmp = snapshot_path().string() + ".tmp";
        {
            std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
            out << snapshot.dump();
            out.flush();
            if (!out) throw Error("IoError", "cannot write snapshot " + tmp);
        }
        if (sync_) sync_file(tmp);
        std::filesystem::rename(tmp, snapshot_path());
        close_log();
        if (std::filesystem::exists(path_)) std::filesystem::resize_file(path_, 0);
        records_since_snapshot_ = 0;
    }

    std::filesystem::path snapshot_path() const { return std::filesystem::path(path_.string() + ".snapshot"); }

private:
    std::filesystem::path path_;
    bool sync_;
    int fd_ = -1;
    std::uint64_t next_seq_ = 1;
    std::size_t records_since_snapshot_ = 0;

    void open_log() {
        if (fd_ >= 0) return;
        fd_ = ::open(path_.c_str(), O_WRONLY | O_CREAT | O_APPEND | O_CLOEXEC, 0644);
        if (fd_ < 0) throw Error("IoError", "cannot open " + path_.string() + ": " + std::strerror(errno));
    }

    void close_log() {
        if (fd_ >= 0) ::close(fd_);
        fd_ = -1;
    }

    void write_all(const std::string& data) {
        std::size_t done = 0;
        while (done < data.size()) {
            const auto n = ::write(fd_, data.data() + done, data.size() - done);
            if (n < 0) {
                if (errno == EINTR) continue;
                throw Error("IoError", "write to " + path_.string() + " failed: " + std::strerror(errno));
            }
            done += static_cast<std::size_t>(n);
        }
    }

    static void sync_file(const std::string& p) {
        const int fd = ::open(p.c_str(), O_RDONLY | O_CLOEXEC);
        if (fd >= 0) {
            ::fsync(fd);
            ::close(fd);
        }
    }
};

}  // namespace sbo
