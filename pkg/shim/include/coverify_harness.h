// Generic printing wrapper for differential testing of C/CUDA functions.
//
// wrapper(fn, args...) invokes fn exactly once (array arguments decay to
// pointers at the call, scalars pass by value) and prints one canonical
// record:
//
//   Return value: <V> Arguments after function call: (<A1>, <A2>, ..., <Ak>)
//
// Arrays render as [ e1, e2, ..., en ] with their compile-time extent;
// scalars render directly; floating values use the stream default of six
// significant digits; a void return prints "void". The record is flushed so
// a crash in a later case cannot lose it.
//
// Raw pointer arguments are rejected at compile time: their extent is
// unknown, so the printer could not snapshot them.

#ifndef COVERIFY_HARNESS_H
#define COVERIFY_HARNESS_H

#include <cfloat>
#include <climits>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <cstdio>
#include <cstdlib>
#include <cstring>
#include <iostream>
#include <type_traits>

namespace coverify {

template <class T>
struct always_false : std::false_type {};

template <class T>
inline void print_value(const T& value) {
    static_assert(!std::is_pointer<T>::value,
                  "coverify: raw pointer arguments have unknown extent; "
                  "declare a sized array in the test snippet instead");
    std::cout << value;
}

template <class T, std::size_t N>
inline void print_value(const T (&array)[N]) {
    std::cout << "[ ";
    for (std::size_t i = 0; i < N; ++i) {
        if (i) std::cout << ", ";
        std::cout << array[i];
    }
    std::cout << " ]";
}

inline void print_separator(bool& first) {
    if (!first) std::cout << ", ";
    first = false;
}

template <class Fn, class... Args>
inline void wrapper_impl(Fn&& fn, Args&&... args) {
    using Ret = decltype(fn(args...));
    std::cout << "Return value: ";
    if constexpr (std::is_void<Ret>::value) {
        fn(args...);
        std::cout << "void";
    } else {
        Ret result = fn(args...);
        std::cout << result;
    }
    std::cout << " Arguments after function call: (";
    bool first = true;
    ((print_separator(first), print_value(args)), ...);
    std::cout << ")" << std::endl;
}

}  // namespace coverify

template <class Fn, class... Args>
inline void wrapper(Fn&& fn, Args&&... args) {
    coverify::wrapper_impl(static_cast<Fn&&>(fn), static_cast<Args&&>(args)...);
}

#endif  // COVERIFY_HARNESS_H
